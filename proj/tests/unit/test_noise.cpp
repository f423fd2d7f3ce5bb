#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "noisynet/model_spec.hpp"
#include "noisynet/noise.hpp"
#include "noisynet/rng.hpp"

using namespace noisynet;

namespace {

struct Moments {
  double mean, std;
};

Moments moments(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

}  // namespace

TEST(ActivationNoise, ZeroSigmaIsIdentity) {
  RngStream r(1, 1);
  const auto a = gaussian<float>(r, {4, 5}, 0.0, 1.0);
  Tape<float> tape;
  const auto x = tape.parameter(a);
  RngStream n(2, 2);
  EXPECT_EQ(ad::inject_activation(x, 0.0, n).value(), a);
  EXPECT_EQ(perturb_weights_additive(a, 0.0, n), a);
  EXPECT_EQ(perturb_weights_lognormal(a, 0.0, n), a);
  EXPECT_EQ(n.counter, 0u);
}

TEST(ActivationNoise, Statistics) {
  Tape<double> tape;
  const auto x = tape.parameter(Tensor<double>({1000000}, 0.25));
  RngStream r(3, stream_id(StreamRole::InferenceNoise, 0, 0, 1));
  const auto y = ad::inject_activation(x, 0.5, r);
  std::vector<double> d(y.value().size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = y.value()[i] - 0.25;
  const auto m = moments(d);
  EXPECT_NEAR(m.mean, 0.0, 0.0015);
  EXPECT_NEAR(m.std, 0.5, 0.0015);
}

TEST(ActivationNoise, BackwardIsIdentity) {
  RngStream init(4, 4);
  const auto w0 = gaussian<double>(init, {3, 4}, 0.0, 1.0);
  const auto x0 = gaussian<double>(init, {2, 4}, 0.0, 1.0);
  Tape<double> tape;
  const auto w = tape.parameter(w0);
  const auto h = ad::linear(tape.constant(x0), w, std::nullopt);
  RngStream r(5, 5);
  const auto noisy = ad::inject_activation(h, 0.7, r);
  const auto g_noisy = tape.grad(ad::sum(ad::mul(noisy, tape.constant(Tensor<double>({2, 3}, 2.0)))), {h, w});
  EXPECT_EQ(g_noisy[0], Tensor<double>({2, 3}, 2.0));
  Tape<double> plain;
  const auto w2 = plain.parameter(w0);
  const auto h2 = ad::linear(plain.constant(x0), w2, std::nullopt);
  const auto g_plain = plain.grad(ad::sum(ad::mul(h2, plain.constant(Tensor<double>({2, 3}, 2.0)))), {w2});
  EXPECT_EQ(g_noisy[1], g_plain[0]);
}

TEST(ActivationNoise, NegativeSigmaRejected) {
  Tape<double> tape;
  RngStream r(1, 1);
  const auto x = tape.parameter(Tensor<double>({2}));
  EXPECT_THROW(ad::inject_activation(x, -0.1, r), ConfigError);
  EXPECT_THROW(perturb_weights_additive(x.value(), -1.0, r), ConfigError);
  EXPECT_THROW(perturb_weights_lognormal(x.value(), -1.0, r), ConfigError);
}

TEST(WeightNoise, AdditiveStatisticsAndDeterminism) {
  const Tensor<double> w({1000000}, -1.0);
  RngStream r(6, stream_id(StreamRole::WeightNoise, 0, 0, 0));
  RngStream replay = r;
  const auto p = perturb_weights_additive(w, 0.3, r);
  std::vector<double> d(p.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = p[i] + 1.0;
  const auto m = moments(d);
  EXPECT_NEAR(m.mean, 0.0, 3 * 0.3 / 1000);
  EXPECT_NEAR(m.std, 0.3, 3 * 0.3 / std::sqrt(2.0 * 1e6));
  EXPECT_EQ(perturb_weights_additive(w, 0.3, replay), p);
  EXPECT_EQ(w[0], -1.0);
}

TEST(WeightNoise, LogNormalPreservesSignAndMean) {
  RngStream init(7, 7);
  const auto w = gaussian<double>(init, {1000000}, 0.0, 1.0);
  const double sigma = 0.4;
  RngStream r(8, stream_id(StreamRole::WeightNoise, 0, 0, 1));
  const auto p = perturb_weights_lognormal(w, sigma, r);
  std::vector<double> ratio(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    ASSERT_EQ(std::signbit(p[i]), std::signbit(w[i]));
    ratio[i] = p[i] / w[i];
  }
  const auto m = moments(ratio);
  // mean of e^lambda is e^(sigma^2/2); its variance is (e^(sigma^2) - 1) e^(sigma^2)
  const double expect = std::exp(sigma * sigma / 2);
  const double se = std::sqrt((std::exp(sigma * sigma) - 1) * std::exp(sigma * sigma) / 1e6);
  EXPECT_NEAR(m.mean, expect, 3 * se);
}

TEST(Sites, MinimalDenseNet) {
  GraphBuilder g({1, 1, 4});
  g.relu(g.linear(g.flatten(g.input()), 10));
  const auto spec = std::move(g).finish("dense", 1, 1, 10);
  const auto sites = enumerate_injection_sites(spec);
  // input site plus one after the linear layer and one after the ReLU
  ASSERT_EQ(sites.size(), 3u);
  EXPECT_EQ(sites[0].kind, LayerKind::Input);
  EXPECT_EQ(sites[1].kind, LayerKind::Linear);
  EXPECT_EQ(sites[2].kind, LayerKind::ReLU);
  EXPECT_EQ(sites.size() - 1, 2u);  // compute-layer sites
}

TEST(Sites, LeNetCount) {
  const auto sites = enumerate_injection_sites(build_lenet5());
  // input, conv, relu, pool, conv, relu, pool, linear, relu, linear, relu, linear
  EXPECT_EQ(sites.size(), 12u);
  for (std::size_t i = 0; i < sites.size(); ++i) EXPECT_EQ(sites[i].index, i);
}

TEST(Sites, ResNetSkipBranchHasAtMostOneSitePerBlock) {
  const auto spec = build_mini("resnet18", 0.25, 1.0);
  const auto sites = enumerate_injection_sites(spec);
  std::size_t skip_sites = 0, residual_sites = 0;
  for (const auto& s : sites) {
    skip_sites += s.branch == Branch::Skip;
    residual_sites += s.branch == Branch::Residual;
  }
  EXPECT_EQ(spec.skip_edges.size(), 8u);
  EXPECT_LE(skip_sites, spec.skip_edges.size());
  EXPECT_EQ(skip_sites, 3u);  // projection shortcuts at the three downsampling blocks
  EXPECT_EQ(residual_sites, 8u * 3u);
}

TEST(Placement, ParseAndCheck) {
  EXPECT_TRUE(parse_placement("global").global);
  EXPECT_EQ(parse_placement("single:4"), Placement::single(4));
  EXPECT_THROW(parse_placement("single:"), ConfigError);
  EXPECT_THROW(parse_placement("everywhere"), ConfigError);
  const auto spec = build_lenet5();
  EXPECT_NO_THROW(check_placement(Placement::single(11), spec));
  try {
    check_placement(Placement::single(12), spec);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("0..11"), std::string::npos);
  }
  EXPECT_TRUE(Placement::single(3).covers(3));
  EXPECT_FALSE(Placement::single(3).covers(2));
}

TEST(Streams, DistinctPerTupleAndRangeChecked) {
  std::set<std::uint64_t> ids;
  for (std::uint64_t s = 0; s < 4; ++s)
    for (std::uint64_t rep = 0; rep < 4; ++rep)
      for (std::uint64_t site = 0; site < 4; ++site)
        for (auto role : {StreamRole::InferenceNoise, StreamRole::TrainingNoise})
          ids.insert(stream_id(role, s, rep, site));
  EXPECT_EQ(ids.size(), 4u * 4u * 4u * 2u);
  EXPECT_THROW(stream_id(StreamRole::InferenceNoise, 1u << 16, 0, 0), ConfigError);
  EXPECT_THROW(stream_id(StreamRole::InferenceNoise, 0, 0, 1u << 20), ConfigError);
}

TEST(Streams, SitesDrawIndependently) {
  NoiseSpec spec;
  spec.rng = RngStream(9, stream_id(StreamRole::InferenceNoise, 2, 3, 0));
  auto a = spec.site_stream(1), b = spec.site_stream(2);
  std::vector<double> x(100000), y(100000);
  fill_gaussian(a, std::span<double>(x), 0.0, 1.0);
  fill_gaussian(b, std::span<double>(y), 0.0, 1.0);
  double c = 0;
  for (std::size_t i = 0; i < x.size(); ++i) c += x[i] * y[i];
  EXPECT_LT(std::abs(c / 1e5), 4 / std::sqrt(1e5));
  spec.rng.stream_id |= 1;
  EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(NoiseModel, NamesRoundTrip) {
  for (auto m : {NoiseModel::AdditiveActivation, NoiseModel::AdditiveWeight, NoiseModel::MultiplicativeLogNormalWeight})
    EXPECT_EQ(parse_noise_model(to_string(m)), m);
  EXPECT_THROW(parse_noise_model("laplace"), ConfigError);
}
