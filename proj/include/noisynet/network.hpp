#pragma once

// Executable models: a ModelSpec plus parameters and quantizer state, run on a
// tape with fake quantizers and noise attached at the injection sites.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "noisynet/autodiff.hpp"
#include "noisynet/errors.hpp"
#include "noisynet/model_spec.hpp"
#include "noisynet/noise.hpp"
#include "noisynet/quant_plan.hpp"
#include "noisynet/rng.hpp"
#include "noisynet/tensor.hpp"

namespace noisynet {

enum class Mode { Train, Eval };

template <class T = float>
struct Model {
  ModelSpec spec;
  std::vector<ParamInfo> param_info;
  std::vector<Tensor<T>> params;
  QuantPlan quant;  // quant.options.enabled == false for float models

  std::size_t param_index(std::size_t layer, bool weight) const {
    for (std::size_t i = 0; i < param_info.size(); ++i)
      if (param_info[i].layer == layer && param_info[i].is_weight == weight) return i;
    return param_info.size();
  }
};

/// Kaiming (fan-in) normal weights ~ N(0, 2 / fan_in); biases uniform in
/// +-1/sqrt(fan_in), the usual framework default. Zero biases would leave a
/// unit whose inputs all quantize to zero with a pre-activation of exactly 0
/// and no ReLU gradient. Parameter k draws from stream (seed, Init, k).
template <class T = float>
Model<T> make_model(ModelSpec spec, std::uint64_t seed, const QuantOptions& quant = {}) {
  Model<T> m;
  m.param_info = spec.parameters();
  for (std::size_t k = 0; k < m.param_info.size(); ++k) {
    const ParamInfo& p = m.param_info[k];
    RngStream rng(seed, stream_id(StreamRole::Init, 0, 0, k));
    const double fan_in = static_cast<double>(p.fan_in);
    if (p.is_weight) {
      m.params.push_back(gaussian<T>(rng, p.shape, 0.0, std::sqrt(2.0 / fan_in)));
    } else {
      Tensor<T> b(p.shape);
      const double bound = 1.0 / std::sqrt(fan_in);
      for (T& v : b.data()) v = static_cast<T>((2.0 * rng.next_uniform() - 1.0) * bound);
      m.params.push_back(std::move(b));
    }
  }
  m.quant = make_quantizers(spec, quant);
  m.spec = std::move(spec);
  return m;
}

/// Per-site activation noise with one stream per site.
struct ActivationNoise {
  double sigma = 0.0;
  Placement placement;
  std::vector<RngStream> streams;

  static ActivationNoise none() { return {}; }

  static ActivationNoise from_spec(const NoiseSpec& spec, std::size_t site_count) {
    spec.validate();
    ActivationNoise n;
    if (spec.model != NoiseModel::AdditiveActivation) return n;
    n.sigma = spec.sigma;
    n.placement = spec.placement;
    for (std::size_t s = 0; s < site_count; ++s) n.streams.push_back(spec.site_stream(s));
    return n;
  }

  double sigma_at(std::size_t site) const { return (sigma > 0.0 && placement.covers(site)) ? sigma : 0.0; }
};

struct ForwardOptions {
  Mode mode = Mode::Eval;
  ActivationNoise* noise = nullptr;   // null: no activation noise
  RngStream* dropout_rng = nullptr;   // required when training a model with dropout
  bool noise_before_quant = false;    // default order: fake-quantize, then add noise
};

template <class T>
struct ForwardResult {
  Var<T> logits;
  std::vector<Var<T>> params;  // tape handles, in Model::params order
};

namespace detail {

template <class T>
ForwardResult<T> run_graph(Tape<T>& tape, const Model<T>& model, const Tensor<T>& batch, const ForwardOptions& opt,
                           std::vector<CalibState>* calibration) {
  const ModelSpec& spec = model.spec;
  Shape expected{batch.rank() ? batch.dim(0) : 0};
  expected.insert(expected.end(), spec.input_shape.begin(), spec.input_shape.end());
  if (batch.shape() != expected)
    throw ShapeError("forward: batch shape " + shape_string(batch.shape()) + " does not match model input " +
                     shape_string(spec.input_shape));
  const auto site_of = site_of_layer(spec);
  const bool quant = model.quant.options.enabled;

  ForwardResult<T> result;
  for (const Tensor<T>& p : model.params) result.params.push_back(tape.parameter(p));

  auto apply_site = [&](Var<T> v, std::size_t site) {
    auto quantize = [&](Var<T> x) {
      if (!quant || !model.quant.activations[site]) return x;
      const QuantConfig& base = *model.quant.activations[site];
      if (base.scaling == ScalingMode::Dynamic && opt.mode == Mode::Train && calibration) {
        CalibState& c = (*calibration)[site];
        c = calibrate_update(c, x.value());
      }
      const CalibState& state = calibration ? (*calibration)[site] : model.quant.calibration[site];
      return ad::fake_quantize(x, resolve_activation(base, state, site));
    };
    auto add_noise = [&](Var<T> x) {
      if (!opt.noise) return x;
      const double sigma = opt.noise->sigma_at(site);
      if (sigma == 0.0) return x;
      return ad::inject_activation(x, sigma, opt.noise->streams.at(site));
    };
    return opt.noise_before_quant ? quantize(add_noise(v)) : add_noise(quantize(v));
  };

  auto weight_var = [&](std::size_t layer) {
    const std::size_t k = model.param_index(layer, true);
    Var<T> w = result.params[k];
    if (quant) {
      const QuantConfig& base = model.quant.weights.at(layer);
      w = ad::fake_quantize(w, resolve_weight(base, w.value()));
    }
    return w;
  };
  auto bias_var = [&](std::size_t layer) -> std::optional<Var<T>> {
    const std::size_t k = model.param_index(layer, false);
    if (k == model.param_info.size()) return std::nullopt;
    return result.params[k];
  };

  std::vector<Var<T>> values(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    Var<T> v;
    switch (l.kind) {
      case LayerKind::Input: v = tape.constant(batch); break;
      case LayerKind::Conv:
        v = ad::conv2d(values[l.inputs[0]], weight_var(i), bias_var(i), l.stride, l.padding, true);
        break;
      case LayerKind::Linear: v = ad::linear(values[l.inputs[0]], weight_var(i), bias_var(i)); break;
      case LayerKind::ReLU: v = ad::relu(values[l.inputs[0]]); break;
      case LayerKind::MaxPool: v = ad::max_pool2d(values[l.inputs[0]], l.kernel, l.stride, l.padding, true); break;
      case LayerKind::AvgPool: v = ad::adaptive_avg_pool2d(values[l.inputs[0]], l.pool_h, l.pool_w); break;
      case LayerKind::Dropout:
        if (opt.mode == Mode::Train) {
          if (!opt.dropout_rng) throw ConfigError("forward: training with dropout needs a dropout stream");
          v = ad::dropout(values[l.inputs[0]], l.dropout_p, *opt.dropout_rng);
        } else {
          v = values[l.inputs[0]];
        }
        break;
      case LayerKind::Flatten: v = ad::flatten(values[l.inputs[0]]); break;
      case LayerKind::Add: v = ad::add(values[l.inputs[0]], values[l.inputs[1]]); break;
      case LayerKind::Softmax: v = ad::softmax(values[l.inputs[0]]); break;
    }
    if (site_of[i]) v = apply_site(v, *site_of[i]);
    values[i] = v;
  }
  result.logits = values[spec.output()];
  if (!result.logits.value().all_finite()) throw NumericError("forward: non-finite logits");
  return result;
}

}  // namespace detail

/// Training-capable forward: Train mode updates dynamic calibration state.
template <class T>
ForwardResult<T> forward(Tape<T>& tape, Model<T>& model, const Tensor<T>& batch, const ForwardOptions& opt) {
  const bool update = opt.mode == Mode::Train && model.quant.options.enabled;
  return detail::run_graph(tape, model, batch, opt, update ? &model.quant.calibration : nullptr);
}

/// Inference-only forward on a shared model.
template <class T>
ForwardResult<T> forward(Tape<T>& tape, const Model<T>& model, const Tensor<T>& batch, const ForwardOptions& opt) {
  if (opt.mode == Mode::Train) throw ConfigError("forward: training mode needs a mutable model");
  return detail::run_graph(tape, model, batch, opt, nullptr);
}

/// Convenience: eval-mode logits without recording a backward graph.
template <class T>
Tensor<T> predict(const Model<T>& model, const Tensor<T>& batch, ActivationNoise* noise = nullptr) {
  Tape<T> tape(false);
  ForwardOptions opt;
  opt.noise = noise;
  return forward(tape, model, batch, opt).logits.value();
}

}  // namespace noisynet
