#include <gtest/gtest.h>

#include <cmath>

#include "noisynet/ops.hpp"
#include "noisynet/rng.hpp"
#include "reference.hpp"

using namespace noisynet;

namespace {

Tensor<float> random_tensor(RngStream& r, Shape s) { return gaussian<float>(r, std::move(s), 0.0, 1.0); }

}  // namespace

TEST(Matmul, HandCases) {
  Tensor<float> id({2, 2}, std::vector<float>{1, 0, 0, 1});
  Tensor<float> m({2, 2}, std::vector<float>{1, 2, 3, 4});
  EXPECT_EQ(ops::matmul(id, m), m);
  Tensor<float> row({1, 2}, std::vector<float>{1, 2});
  Tensor<float> col({2, 1}, std::vector<float>{3, 4});
  EXPECT_EQ(ops::matmul(row, col).item(), 11.0f);
  EXPECT_THROW(ops::matmul(m, row), ShapeError);
}

TEST(Matmul, EqualsTripleLoopBitExactly) {
  RngStream r(1, 1);
  for (int c = 0; c < 100; ++c) {
    const std::size_t m = 1 + r.next_below(9), k = 1 + r.next_below(9), n = 1 + r.next_below(9);
    const auto a = random_tensor(r, {m, k});
    const auto b = random_tensor(r, {k, n});
    ASSERT_EQ(ops::matmul(a, b), ref::matmul(a, b)) << m << "x" << k << "x" << n;
  }
  const auto a = random_tensor(r, {5, 7});
  const auto b = random_tensor(r, {7, 3});
  EXPECT_EQ(ops::matmul(a, b), ref::matmul(a, b));
}

TEST(Linear, MatchesTransposedMatmulPlusBias) {
  RngStream r(1, 2);
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = 1 + r.next_below(5), in = 1 + r.next_below(9), out = 1 + r.next_below(9);
    const auto x = random_tensor(r, {n, in});
    const auto w = random_tensor(r, {out, in});
    const auto b = random_tensor(r, {out});
    Tensor<float> wt({in, out});
    for (std::size_t i = 0; i < out; ++i)
      for (std::size_t j = 0; j < in; ++j) wt.at(j, i) = w.at(i, j);
    auto expect = ref::matmul(x, wt);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out; ++j) expect.at(i, j) += b[j];
    ASSERT_EQ(ops::linear(x, w, &b), expect);
  }
}

TEST(Conv2d, ScalarAndDeltaKernels) {
  Tensor<float> ones({1, 1, 3, 3}, 1.0f);
  Tensor<float> two({1, 1, 1, 1}, 2.0f);
  EXPECT_EQ(ops::conv2d(ones, two, nullptr, 1, 0), Tensor<float>({1, 1, 3, 3}, 2.0f));

  RngStream r(3, 3);
  const auto x = random_tensor(r, {2, 1, 5, 5});
  Tensor<float> delta({1, 1, 3, 3});
  delta.at(0, 0, 1, 1) = 1.0f;
  EXPECT_EQ(ops::conv2d(x, delta, nullptr, 1, 1), x);
}

TEST(Conv2d, EqualsDirectLoopsBitExactly) {
  RngStream r(4, 4);
  const auto x = random_tensor(r, {2, 3, 8, 8});
  const auto w = random_tensor(r, {4, 3, 3, 3});
  EXPECT_EQ(ops::conv2d(x, w, nullptr, 1, 0), ref::conv2d<float>(x, w, nullptr, 1, 0));
  int tested = 0;
  for (int c = 0; c < 400 && tested < 100; ++c) {
    const std::size_t k = 1 + r.next_below(4), stride = 1 + r.next_below(2), pad = r.next_below(2);
    const std::size_t h = k + r.next_below(6);
    if ((h + 2 * pad - k) % stride != 0) continue;
    const auto xi = random_tensor(r, {1 + r.next_below(2), 1 + r.next_below(3), h, h});
    const auto wi = random_tensor(r, {1 + r.next_below(4), xi.dim(1), k, k});
    const auto bi = random_tensor(r, {wi.dim(0)});
    ASSERT_EQ(ops::conv2d(xi, wi, &bi, stride, pad), ref::conv2d(xi, wi, &bi, stride, pad));
    ++tested;
  }
  EXPECT_EQ(tested, 100);
}

TEST(Conv2d, ShapeErrors) {
  Tensor<float> x({1, 2, 5, 5});
  EXPECT_THROW(ops::conv2d(x, Tensor<float>({1, 3, 3, 3}), nullptr, 1, 0), ShapeError);
  // (5 - 2) / 2 is not integral
  EXPECT_THROW(ops::conv2d(x, Tensor<float>({1, 2, 2, 2}), nullptr, 2, 0), ShapeError);
  EXPECT_NO_THROW(ops::conv2d(x, Tensor<float>({1, 2, 2, 2}), nullptr, 2, 0, true));
}

TEST(Pooling, MaxAndAverageMatchNaiveLoops) {
  RngStream r(5, 5);
  for (int c = 0; c < 100; ++c) {
    const std::size_t k = 1 + r.next_below(3);
    const std::size_t h = k * (1 + r.next_below(4));
    const auto x = random_tensor(r, {1 + r.next_below(2), 1 + r.next_below(3), h, h});
    ASSERT_EQ(ops::max_pool2d(x, k, k).output, ref::max_pool(x, k, k));
    ASSERT_EQ(ops::adaptive_avg_pool2d(x, h / k, h / k), ref::avg_pool(x, k));
  }
}

TEST(Pooling, MaxPoolTiesRouteToFirstIndex) {
  Tensor<float> x({1, 1, 2, 2}, 1.0f);
  const auto r = ops::max_pool2d(x, 2, 2);
  EXPECT_EQ(r.argmax[0], 0u);
  const auto g = ops::max_pool2d_backward(x.shape(), r.argmax, Tensor<float>({1, 1, 1, 1}, 1.0f));
  EXPECT_EQ(g, Tensor<float>({1, 1, 2, 2}, std::vector<float>{1, 0, 0, 0}));
}

TEST(Elementwise, MatchNaive) {
  RngStream r(6, 6);
  for (int c = 0; c < 100; ++c) {
    const auto a = random_tensor(r, {1 + r.next_below(20)});
    const auto b = random_tensor(r, a.shape());
    const auto s = ops::add(a, b), d = ops::sub(a, b), m = ops::mul(a, b), re = ops::relu(a);
    float total = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ASSERT_EQ(s[i], a[i] + b[i]);
      ASSERT_EQ(d[i], a[i] - b[i]);
      ASSERT_EQ(m[i], a[i] * b[i]);
      ASSERT_EQ(re[i], a[i] > 0 ? a[i] : 0.0f);
      total += a[i];
    }
    ASSERT_EQ(ops::sum(a), total);
    ASSERT_EQ(ops::mean(a), total / static_cast<float>(a.size()));
  }
  EXPECT_THROW(ops::add(Tensor<float>({2}), Tensor<float>({3})), ShapeError);
  EXPECT_THROW(ops::add(Tensor<float>({2, 1}), Tensor<float>({1, 2})), ShapeError);
}

TEST(Argmax, LowestIndexOnTies) {
  Tensor<float> a({2, 3}, std::vector<float>{1, 3, 3, 0, 0, 0});
  EXPECT_EQ(ops::argmax_rows(a), (std::vector<std::size_t>{1, 0}));
}

TEST(Softmax, RowsSumToOneAndMatchDefinition) {
  RngStream r(7, 7);
  const auto a = gaussian<double>(r, {4, 6}, 0.0, 3.0);
  const auto s = ops::softmax_rows(a);
  for (std::size_t i = 0; i < 4; ++i) {
    double z = 0, total = 0;
    for (std::size_t j = 0; j < 6; ++j) z += std::exp(a.at(i, j));
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_NEAR(s.at(i, j), std::exp(a.at(i, j)) / z, 1e-15);
      total += s.at(i, j);
    }
    EXPECT_NEAR(total, 1.0, 1e-15);
  }
}

TEST(CrossEntropy, UniformConfidentAndRandom) {
  Tensor<float> uniform({3, 10}, 0.0f);
  EXPECT_NEAR(ops::cross_entropy(uniform, {0, 4, 9}), std::log(10.0), 1e-6);

  Tensor<float> confident({1, 10}, 0.0f);
  confident[3] = 100.0f;
  EXPECT_LT(ops::cross_entropy(confident, {3}), 1e-6f);

  RngStream r(8, 8);
  for (int c = 0; c < 20; ++c) {
    const auto logits = gaussian<double>(r, {16, 10}, 0.0, 4.0);
    std::vector<std::size_t> labels(16);
    for (auto& l : labels) l = r.next_below(10);
    EXPECT_NEAR(ops::cross_entropy(logits, labels), ref::cross_entropy(logits, labels), 1e-6);
  }
  EXPECT_THROW(ops::cross_entropy(uniform, {0, 1}), ShapeError);
}

TEST(Ops, NaNPropagatesThroughReluAndMaxPool) {
  Tensor<float> x({1, 1, 2, 2}, 1.0f);
  x[3] = NAN;
  EXPECT_TRUE(std::isnan(ops::relu(x)[3]));
  EXPECT_TRUE(std::isnan(ops::max_pool2d(x, 2, 2).output[0]));
}
