#include <gtest/gtest.h>

#include <cmath>

#include "noisynet/training.hpp"

using namespace noisynet;

namespace {

// Two Gaussian blobs in 4-d, linearly separable with a wide margin.
Dataset blobs(std::size_t n, std::uint64_t seed, const std::string& split) {
  RngStream r(seed, 77);
  Dataset ds;
  ds.num_classes = 2;
  ds.split = split;
  ds.images = Tensor<float>({n, 1, 1, 4});
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    ds.labels.push_back(label);
    for (std::size_t k = 0; k < 4; ++k)
      ds.images[i * 4 + k] = static_cast<float>((label ? 1.5 : -1.5) + 0.3 * (2 * r.next_uniform() - 1));
  }
  return ds;
}

ModelSpec mlp() {
  GraphBuilder g({1, 1, 4});
  g.linear(g.relu(g.linear(g.flatten(g.input()), 8)), 2);
  return std::move(g).finish("mlp", 1, 1, 2);
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 8;
  cfg.lr = 0.02;
  cfg.seed = 5;
  cfg.eval_batch = 16;
  return cfg;
}

}  // namespace

TEST(CosineSchedule, Endpoints) {
  EXPECT_EQ(cosine_lr(0.1, 0, 100), 0.1);
  EXPECT_NEAR(cosine_lr(0.1, 50, 100), 0.05, 1e-15);
  EXPECT_EQ(cosine_lr(0.1, 100, 100), 0.0);
  for (std::size_t t = 1; t < 100; ++t) EXPECT_LT(cosine_lr(0.1, t, 100), cosine_lr(0.1, t - 1, 100));
}

TEST(Adam, SingleStepClosedForm) {
  TrainConfig cfg;
  std::vector<Tensor<double>> params{Tensor<double>({3}, std::vector<double>{1.0, -2.0, 0.5})};
  const std::vector<Tensor<double>> grads{Tensor<double>({3}, std::vector<double>{0.3, -4.0, 0.0})};
  AdamState<double> state(params);
  adam_step(params, grads, state, 0.01, cfg);
  // bias-corrected moments equal g and g^2, so the step is -lr * g / (|g| + eps)
  EXPECT_NEAR(params[0][0], 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(params[0][1], -2.0 + 0.01 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_EQ(params[0][2], 0.5);
  EXPECT_EQ(state.m[0][0], (1.0 - 0.9) * 0.3);
  EXPECT_EQ(state.v[0][1], (1.0 - 0.999) * 16.0);
}

TEST(Adam, ZeroGradientDecaysMoments) {
  TrainConfig cfg;
  std::vector<Tensor<double>> params{Tensor<double>({1}, 2.0)};
  AdamState<double> state(params);
  state.m[0][0] = 1.0;
  state.v[0][0] = 1.0;
  state.step = 10;
  const std::vector<Tensor<double>> zero{Tensor<double>({1}, 0.0)};
  const double before = params[0][0];
  adam_step(params, zero, state, 0.0, cfg);
  EXPECT_EQ(params[0][0], before);
  EXPECT_DOUBLE_EQ(state.m[0][0], 0.9);
  EXPECT_DOUBLE_EQ(state.v[0][0], 0.999);
  EXPECT_THROW(adam_step(params, {}, state, 0.1, cfg), ShapeError);
}

TEST(Train, SeparableProblemReachesFullAccuracy) {
  auto model = make_model<float>(mlp(), 1);
  const auto hist = train(model, blobs(64, 1, "train"), blobs(32, 2, "test"), small_config());
  ASSERT_EQ(hist.epochs.size(), 15u);
  EXPECT_EQ(hist.epochs.back().train_accuracy, 1.0);
  EXPECT_EQ(hist.epochs.back().test_accuracy, 1.0);
  EXPECT_LT(hist.epochs.back().train_loss, hist.epochs.front().train_loss);
  EXPECT_EQ(hist.epochs[0].lr, 0.02);
}

TEST(Train, DeterministicForFixedSeed) {
  auto cfg = small_config();
  cfg.sigma_train = 0.3;
  auto a = make_model<float>(mlp(), 1), b = make_model<float>(mlp(), 1);
  const auto ha = train(a, blobs(64, 1, "train"), blobs(32, 2, "test"), cfg);
  const auto hb = train(b, blobs(64, 1, "train"), blobs(32, 2, "test"), cfg);
  EXPECT_EQ(ha, hb);
  EXPECT_EQ(a.params, b.params);
  cfg.seed = 6;
  auto c = make_model<float>(mlp(), 1);
  train(c, blobs(64, 1, "train"), blobs(32, 2, "test"), cfg);
  EXPECT_NE(a.params, c.params);
}

// The trainer at sigma_train = 0 equals a plain loop built from the public
// pieces: one shuffle stream, cosine schedule, cross-entropy, Adam.
TEST(Train, ZeroSigmaEqualsPlainLoop) {
  const auto train_set = blobs(40, 3, "train"), test_set = blobs(10, 4, "test");
  auto cfg = small_config();
  cfg.epochs = 4;
  auto model = make_model<float>(mlp(), 9);
  auto ref = model;
  train(model, train_set, test_set, cfg);

  RngStream shuffle(cfg.seed, stream_id(StreamRole::Shuffle, 0, 0, 0));
  AdamState<float> adam(ref.params);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto order = permutation(train_set.size(), shuffle);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<long>(s),
                                         order.begin() + static_cast<long>(std::min(order.size(), s + cfg.batch_size)));
      Tape<float> tape;
      ForwardOptions opt;
      opt.mode = Mode::Train;
      const auto fr = forward(tape, ref, gather_images<float>(train_set, idx), opt);
      const auto labels = gather_labels(train_set, idx);
      const auto loss = ad::cross_entropy(fr.logits, std::vector<std::size_t>(labels.begin(), labels.end()));
      adam_step(ref.params, tape.grad(loss, fr.params), adam, cosine_lr(cfg.lr, e, cfg.epochs), cfg);
    }
  }
  EXPECT_EQ(model.params, ref.params);
}

TEST(Train, NonFiniteReportsWhere) {
  auto model = make_model<float>(mlp(), 1);
  model.params[0][0] = NAN;
  try {
    train(model, blobs(16, 1, "train"), blobs(8, 2, "test"), small_config());
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("lr"), std::string::npos) << msg;
  }
}

TEST(Train, ConfigAndShapeValidation) {
  auto model = make_model<float>(mlp(), 1);
  auto cfg = small_config();
  cfg.epochs = 0;
  EXPECT_THROW(train(model, blobs(16, 1, "train"), blobs(8, 2, "test"), cfg), ConfigError);
  cfg = small_config();
  cfg.sigma_train = -1;
  EXPECT_THROW(train(model, blobs(16, 1, "train"), blobs(8, 2, "test"), cfg), ConfigError);
  Dataset wrong = blobs(8, 1, "train");
  wrong.images = wrong.images.reshaped({8, 1, 2, 2});
  EXPECT_THROW(train(model, wrong, blobs(8, 2, "test"), small_config()), ShapeError);
}

TEST(Train, QuantizedCalibrationFrozenAfterTraining) {
  QuantOptions q;
  q.enabled = true;
  q.bits = 8;
  auto model = make_model<float>(mlp(), 1, q);
  const auto test_set = blobs(32, 2, "test");
  const auto hist = train(model, blobs(64, 1, "train"), test_set, small_config());
  EXPECT_EQ(hist.epochs.back().test_accuracy, 1.0);
  ASSERT_GT(model.quant.count_activation(), 0u);
  for (std::size_t s = 0; s < model.quant.calibration.size(); ++s) {
    EXPECT_EQ(model.quant.calibration[s].initialized, model.quant.activations[s].has_value()) << s;
    EXPECT_TRUE(model.quant.calibration[s].frozen) << s;
    EXPECT_LE(model.quant.calibration[s].running_min, model.quant.calibration[s].running_max);
  }
  const auto before = model.quant.calibration;
  evaluate(model, test_set);
  EXPECT_EQ(model.quant.calibration, before);
  // stored weights stay full precision
  std::size_t off_grid = 0;
  const auto w = resolve_weight(model.quant.weights.begin()->second, model.params[0]);
  const auto fq = fake_quantize_values(model.params[0], w);
  for (std::size_t i = 0; i < fq.size(); ++i) off_grid += fq[i] != model.params[0][i];
  EXPECT_GT(off_grid, 0u);
}

TEST(Evaluate, BatchSizeDoesNotChangeAccuracy) {
  auto model = make_model<float>(mlp(), 2);
  const auto ds = blobs(37, 3, "test");
  EXPECT_EQ(evaluate(model, ds, nullptr, 5), evaluate(model, ds, nullptr, 100));
}
