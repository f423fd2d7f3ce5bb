#pragma once

// Minibatch training with Adam and cosine learning-rate decay. Covers plain,
// quantization-aware and noisy training (and both together).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "noisynet/autodiff.hpp"
#include "noisynet/dataset.hpp"
#include "noisynet/errors.hpp"
#include "noisynet/network.hpp"
#include "noisynet/noise.hpp"
#include "noisynet/ops.hpp"
#include "noisynet/rng.hpp"

namespace noisynet {

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double sigma_train = 0.0;
  std::uint64_t seed = 0;
  std::size_t eval_batch = 500;
  bool noise_before_quant = false;
  bool monitor_noisy = true;  // also record test accuracy under the training noise

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (eval_batch < 1) throw ConfigError("eval_batch must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("Adam epsilon must be > 0");
    if (!(sigma_train >= 0.0) || !std::isfinite(sigma_train)) throw ConfigError("sigma_train must be finite and >= 0");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;        // noiseless
  double test_accuracy_noisy = 0.0;  // at sigma_train (equals test_accuracy when sigma_train == 0)

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

/// eta0 * (1 + cos(pi t / T)) / 2, clamped at 0 for t >= T.
inline double cosine_lr(double lr0, std::size_t t, std::size_t total) {
  if (total == 0 || t >= total) return 0.0;
  const double v = lr0 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(total))) / 2.0;
  return v > 0.0 ? v : 0.0;
}

template <class T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::size_t step = 0;

  explicit AdamState(const std::vector<Tensor<T>>& params) {
    for (const auto& p : params) {
      m.emplace_back(p.shape());
      v.emplace_back(p.shape());
    }
  }
};

/// One Adam update with bias correction, computed in double per element.
template <class T>
void adam_step(std::vector<Tensor<T>>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state, double lr,
               const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw ShapeError("adam_step: parameter/gradient count mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    require_same_shape(params[k].shape(), grads[k].shape(), "adam_step");
    T* p = params[k].raw();
    T* m = state.m[k].raw();
    T* v = state.v[k].raw();
    const T* g = grads[k].raw();
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      p[i] = static_cast<T>(p[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
    }
  }
}

template <class T>
std::size_t count_correct(const Tensor<T>& logits, const std::vector<int>& labels, std::size_t offset = 0) {
  const auto pred = ops::argmax_rows(logits);
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) n += static_cast<int>(pred[i]) == labels[offset + i];
  return n;
}

/// Eval-mode accuracy over `ds`, processed in fixed-size batches in order, so
/// the noise draws depend only on the streams in `noise`.
template <class T>
double evaluate(const Model<T>& model, const Dataset& ds, ActivationNoise* noise = nullptr, std::size_t batch = 500,
                bool noise_before_quant = false) {
  ds.validate();
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += batch) {
    const std::size_t end = std::min(ds.size(), start + batch);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    Tape<T> tape(false);
    ForwardOptions opt;
    opt.noise = noise;
    opt.noise_before_quant = noise_before_quant;
    const auto out = forward(tape, model, gather_images<T>(ds, idx), opt);
    correct += count_correct(out.logits.value(), ds.labels, start);
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

/// Training-noise streams of a run: sigma slot 0 drives training, slot 1 the
/// per-epoch noisy test monitor (repeat field = epoch).
inline ActivationNoise training_noise(std::uint64_t seed, double sigma, std::size_t sites, std::size_t slot,
                                      std::size_t repeat) {
  NoiseSpec spec;
  spec.sigma = sigma;
  spec.rng = RngStream(seed, stream_id(StreamRole::TrainingNoise, slot, repeat, 0));
  return ActivationNoise::from_spec(spec, sites);
}

template <class T>
TrainHistory train(Model<T>& model, const Dataset& train_set, const Dataset& test_set, const TrainConfig& cfg) {
  cfg.validate();
  train_set.validate();
  test_set.validate();
  if (train_set.sample_shape() != model.spec.input_shape)
    throw ShapeError("train: dataset samples " + shape_string(train_set.sample_shape()) + " do not match model input " +
                     shape_string(model.spec.input_shape));
  for (auto& c : model.quant.calibration) c.frozen = false;

  const std::size_t sites = enumerate_injection_sites(model.spec).size();
  RngStream shuffle(cfg.seed, stream_id(StreamRole::Shuffle, 0, 0, 0));
  RngStream dropout(cfg.seed, stream_id(StreamRole::Dropout, 0, 0, 0));
  ActivationNoise noise = training_noise(cfg.seed, cfg.sigma_train, sites, 0, 0);
  AdamState<T> adam(model.params);
  TrainHistory history;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
    const auto order = permutation(train_set.size(), shuffle);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      const auto labels = gather_labels(train_set, idx);
      auto where = [&] {
        std::ostringstream os;
        os << "epoch " << epoch << ", batch " << batch_no << ", lr " << lr;
        return os.str();
      };

      Tape<T> tape;
      ForwardOptions opt;
      opt.mode = Mode::Train;
      opt.noise = cfg.sigma_train > 0.0 ? &noise : nullptr;
      opt.dropout_rng = &dropout;
      opt.noise_before_quant = cfg.noise_before_quant;
      ForwardResult<T> fr;
      try {
        fr = forward(tape, model, gather_images<T>(train_set, idx), opt);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (" + where() + ")");
      }
      Var<T> loss = ad::cross_entropy(fr.logits, std::vector<std::size_t>(labels.begin(), labels.end()));
      const double l = static_cast<double>(loss.value().item());
      if (!std::isfinite(l)) throw NumericError("non-finite training loss (" + where() + ")");
      auto grads = tape.grad(loss, fr.params);
      adam_step(model.params, grads, adam, lr, cfg);
      loss_sum += l * static_cast<double>(idx.size());
      correct += count_correct(fr.logits.value(), labels);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    rec.test_accuracy = evaluate(model, test_set, nullptr, cfg.eval_batch, cfg.noise_before_quant);
    rec.test_accuracy_noisy = rec.test_accuracy;
    if (cfg.sigma_train > 0.0 && cfg.monitor_noisy) {
      ActivationNoise monitor = training_noise(cfg.seed, cfg.sigma_train, sites, 1, epoch);
      rec.test_accuracy_noisy = evaluate(model, test_set, &monitor, cfg.eval_batch, cfg.noise_before_quant);
    }
    history.epochs.push_back(rec);
  }
  model.quant.freeze();
  return history;
}

}  // namespace noisynet
