#pragma once

// Quantizer placement for a whole model: per-channel symmetric weights on
// convolutions, per-tensor symmetric weights on linear layers and one
// per-tensor quantizer on every ReLU output (plus, optionally, the input).
// Pre-activations stay in full precision so the ReLU derivative is taken at
// the real value; quantizing them would turn every pre-activation inside
// (-s/2, s/2) into an exact zero and cut the gradient there.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "noisynet/errors.hpp"
#include "noisynet/model_spec.hpp"
#include "noisynet/noise.hpp"
#include "noisynet/quantizer.hpp"

namespace noisynet {

struct QuantOptions {
  bool enabled = false;
  int bits = 8;
  ScalingMode activation_scaling = ScalingMode::Dynamic;
  double constant_scale = 1.0;  // activation scale in Constant mode
  bool quantize_input = false;  // quantizer on site 0 (the raw input)
  double momentum = 0.99;       // EMA momentum of dynamic calibration

  void validate() const {
    if (!enabled) return;
    grid_range(bits, true);
    if (activation_scaling == ScalingMode::Constant && !(constant_scale > 0.0))
      throw ConfigError("constant activation scale must be > 0");
    if (!(momentum > 0.0 && momentum < 1.0)) throw ConfigError("calibration momentum must lie in (0, 1)");
  }

  friend bool operator==(const QuantOptions&, const QuantOptions&) = default;
};

inline std::string quant_mode_name(const QuantOptions& q) {
  if (!q.enabled) return "fp32";
  return q.activation_scaling == ScalingMode::Dynamic ? "dynamic" : "constant";
}

struct QuantPlan {
  QuantOptions options;
  std::map<std::size_t, QuantConfig> weights;           // keyed by layer index
  std::vector<std::optional<QuantConfig>> activations;  // indexed by site
  std::vector<CalibState> calibration;                  // indexed by site, used in Dynamic mode

  std::size_t count_weight(Granularity g) const {
    std::size_t n = 0;
    for (const auto& [layer, cfg] : weights) n += cfg.granularity == g;
    return n;
  }
  std::size_t count_activation() const {
    std::size_t n = 0;
    for (const auto& a : activations) n += a.has_value();
    return n;
  }

  void freeze() {
    for (CalibState& c : calibration) c.frozen = true;
  }
};

inline QuantConfig weight_quant_config(int bits, bool per_channel) {
  QuantConfig cfg;
  cfg.bits = bits;
  cfg.is_signed = true;
  cfg.symmetric = true;
  cfg.narrow_range = true;
  cfg.granularity = per_channel ? Granularity::PerChannel : Granularity::PerTensor;
  cfg.axis = 0;
  cfg.scaling = ScalingMode::Dynamic;
  return cfg;
}

inline QuantConfig activation_quant_config(const QuantOptions& opt) {
  if (opt.activation_scaling == ScalingMode::Constant) return constant_scale_config(opt.bits, opt.constant_scale, true);
  QuantConfig cfg;
  cfg.bits = opt.bits;
  cfg.is_signed = false;
  cfg.symmetric = false;
  cfg.granularity = Granularity::PerTensor;
  cfg.scaling = ScalingMode::Dynamic;
  return cfg;
}

inline QuantPlan make_quantizers(const ModelSpec& spec, const QuantOptions& options) {
  options.validate();
  QuantPlan plan;
  plan.options = options;
  if (!options.enabled) return plan;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerKind k = spec.layers[i].kind;
    if (k == LayerKind::Conv)
      plan.weights.emplace(i, weight_quant_config(options.bits, true));
    else if (k == LayerKind::Linear)
      plan.weights.emplace(i, weight_quant_config(options.bits, false));
  }
  const auto sites = enumerate_injection_sites(spec);
  plan.activations.resize(sites.size());
  plan.calibration.assign(sites.size(), CalibState{0.0, 0.0, options.momentum, false, false});
  for (const InjectionSite& s : sites)
    if (s.kind == LayerKind::ReLU || (s.kind == LayerKind::Input && options.quantize_input))
      plan.activations[s.index] = activation_quant_config(options);
  return plan;
}

/// Resolves an activation quantizer from its calibration state.
inline QuantConfig resolve_activation(const QuantConfig& base, const CalibState& calib, std::size_t site) {
  if (base.scaling == ScalingMode::Constant) return base;
  if (!calib.initialized)
    throw ConfigError("activation quantizer at site " + std::to_string(site) + " has never been calibrated");
  QuantConfig cfg = base;
  resolve_from_extrema(cfg, {calib.running_min}, {calib.running_max});
  return cfg;
}

/// Resolves a weight quantizer from the current weight values.
template <class T>
QuantConfig resolve_weight(const QuantConfig& base, const Tensor<T>& weight) {
  QuantConfig cfg = base;
  const auto [lo, hi] = channel_extrema(weight, cfg);
  resolve_from_extrema(cfg, lo, hi);
  return cfg;
}

}  // namespace noisynet
