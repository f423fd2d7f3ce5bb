#pragma once

// Uniform fake quantization.
//
//   q = clamp(round(x / s) + z, q_min, q_max)      (round half to even)
//   x_hat = s * (q - z)
//
// The clip range is [alpha, beta] = [(q_min - z) s, (q_max - z) s]. The
// backward pass is the clipped straight-through estimator: gradient 1 for
// alpha <= x <= beta and 0 elsewhere.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "noisynet/autodiff.hpp"
#include "noisynet/errors.hpp"
#include "noisynet/tensor.hpp"

namespace noisynet {

enum class Granularity { PerTensor, PerChannel };
enum class ScalingMode { Dynamic, Constant };

struct GridRange {
  std::int64_t min, max;
};

/// Integer grid for `bits`: [0, 2^b-1] unsigned, [-2^(b-1), 2^(b-1)-1] signed.
/// `narrow` drops the most negative signed level, making the grid odd-symmetric.
inline GridRange grid_range(int bits, bool is_signed, bool narrow = false) {
  if (bits < 2 || bits > 31) throw ConfigError("bit width must lie in [2, 31], got " + std::to_string(bits));
  if (!is_signed) return {0, (std::int64_t{1} << bits) - 1};
  const std::int64_t half = std::int64_t{1} << (bits - 1);
  return {narrow ? -(half - 1) : -half, half - 1};
}

/// s = (beta - alpha) / (2^b - 1)
inline double scale_from_range(double alpha, double beta, int bits) {
  if (!(beta > alpha)) throw ConfigError("scale_from_range: need beta > alpha");
  if (bits < 2) throw ConfigError("scale_from_range: bit width must be >= 2");
  return (beta - alpha) / static_cast<double>((std::int64_t{1} << bits) - 1);
}

struct QuantConfig {
  int bits = 8;
  bool is_signed = true;
  bool symmetric = true;
  bool narrow_range = false;
  Granularity granularity = Granularity::PerTensor;
  std::size_t axis = 0;  // channel axis for PerChannel
  ScalingMode scaling = ScalingMode::Dynamic;
  // Resolved parameters: one entry for PerTensor, one per channel otherwise.
  std::vector<double> scale{1.0};
  std::vector<std::int64_t> zero_point{0};

  GridRange grid() const { return grid_range(bits, is_signed, narrow_range); }
  double alpha(std::size_t ch = 0) const { return static_cast<double>(grid().min - zero_point.at(ch)) * scale.at(ch); }
  double beta(std::size_t ch = 0) const { return static_cast<double>(grid().max - zero_point.at(ch)) * scale.at(ch); }

  void validate() const {
    const GridRange g = grid();
    if (scale.empty() || scale.size() != zero_point.size())
      throw ConfigError("quantizer: scale and zero-point counts differ");
    if (granularity == Granularity::PerTensor && scale.size() != 1)
      throw ConfigError("quantizer: per-tensor config must hold exactly one scale");
    for (std::size_t c = 0; c < scale.size(); ++c) {
      if (!(scale[c] > 0.0) || !std::isfinite(scale[c])) throw ConfigError("quantizer: scale must be finite and > 0");
      if (zero_point[c] < g.min || zero_point[c] > g.max) throw ConfigError("quantizer: zero point outside grid");
      if (symmetric && zero_point[c] != 0) throw ConfigError("quantizer: symmetric config requires zero point 0");
    }
  }

  friend bool operator==(const QuantConfig&, const QuantConfig&) = default;
};

/// Builds a fixed-scale config (z = 0).
inline QuantConfig constant_scale_config(int bits, double s, bool is_signed = true) {
  QuantConfig cfg;
  cfg.bits = bits;
  cfg.is_signed = is_signed;
  cfg.symmetric = true;
  cfg.scaling = ScalingMode::Constant;
  cfg.scale = {s};
  cfg.zero_point = {0};
  cfg.validate();
  return cfg;
}

/// Resolves (s, z) for every channel from observed extrema.
/// Symmetric: s from max|x| (narrow grid: s = m / q_max, so -alpha = beta = m).
/// Asymmetric: [alpha, beta] = [min(lo, 0), max(hi, 0)], s by scale_from_range,
/// z = q_min - round(alpha / s).
inline void resolve_from_extrema(QuantConfig& cfg, const std::vector<double>& lo, const std::vector<double>& hi) {
  const GridRange g = cfg.grid();
  cfg.scale.assign(lo.size(), 1.0);
  cfg.zero_point.assign(lo.size(), 0);
  for (std::size_t c = 0; c < lo.size(); ++c) {
    if (cfg.symmetric) {
      const double m = cfg.is_signed ? std::max(std::abs(lo[c]), std::abs(hi[c])) : std::max(hi[c], 0.0);
      if (m > 0.0)
        cfg.scale[c] = (cfg.is_signed && !cfg.narrow_range) ? scale_from_range(-m, m, cfg.bits)
                                                             : m / static_cast<double>(g.max);
    } else {
      const double alpha = std::min(lo[c], 0.0);
      const double beta = std::max(hi[c], 0.0);
      if (beta > alpha) {
        const double s = scale_from_range(alpha, beta, cfg.bits);
        cfg.scale[c] = s;
        const auto z = g.min - static_cast<std::int64_t>(std::nearbyint(alpha / s));
        cfg.zero_point[c] = std::clamp(z, g.min, g.max);
      }
    }
  }
}

namespace detail {

struct ChannelIndexer {
  std::size_t inner = 1, channels = 1;
  std::size_t operator()(std::size_t flat) const { return (flat / inner) % channels; }
};

inline ChannelIndexer channel_indexer(const QuantConfig& cfg, const Shape& shape) {
  if (cfg.granularity == Granularity::PerTensor) return {1, 1};
  if (cfg.axis >= shape.size()) throw ShapeError("quantizer: channel axis out of range for " + shape_string(shape));
  if (shape[cfg.axis] != cfg.scale.size())
    throw ShapeError("quantizer: " + std::to_string(cfg.scale.size()) + " channel scales for shape " +
                     shape_string(shape));
  std::size_t inner = 1;
  for (std::size_t a = cfg.axis + 1; a < shape.size(); ++a) inner *= shape[a];
  return {inner, shape[cfg.axis]};
}

inline std::int64_t quantize_scalar(double x, double s, std::int64_t z, GridRange g) {
  const double level = std::nearbyint(x / s) + static_cast<double>(z);
  if (level <= static_cast<double>(g.min)) return g.min;
  if (level >= static_cast<double>(g.max)) return g.max;
  return static_cast<std::int64_t>(level);
}

}  // namespace detail

/// Per-channel extrema along cfg.axis (one entry for PerTensor).
template <class T>
std::pair<std::vector<double>, std::vector<double>> channel_extrema(const Tensor<T>& x, const QuantConfig& cfg) {
  std::size_t channels = 1, inner = 1;
  if (cfg.granularity == Granularity::PerChannel) {
    if (cfg.axis >= x.rank()) throw ShapeError("quantizer: channel axis out of range");
    channels = x.dim(cfg.axis);
    for (std::size_t a = cfg.axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  }
  std::vector<double> lo(channels, INFINITY), hi(channels, -INFINITY);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = (i / inner) % channels;
    const double v = static_cast<double>(x[i]);
    lo[c] = std::min(lo[c], v);
    hi[c] = std::max(hi[c], v);
  }
  return {lo, hi};
}

template <class T>
Tensor<std::int32_t> quantize(const Tensor<T>& x, const QuantConfig& cfg) {
  cfg.validate();
  const auto ch = detail::channel_indexer(cfg, x.shape());
  const GridRange g = cfg.grid();
  Tensor<std::int32_t> q(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x[i]);
    if (!std::isfinite(v)) throw NumericError("quantize: non-finite input at element " + std::to_string(i));
    const std::size_t c = ch(i);
    q[i] = static_cast<std::int32_t>(detail::quantize_scalar(v, cfg.scale[c], cfg.zero_point[c], g));
  }
  return q;
}

template <class T = float>
Tensor<T> dequantize(const Tensor<std::int32_t>& q, const QuantConfig& cfg) {
  cfg.validate();
  const auto ch = detail::channel_indexer(cfg, q.shape());
  const GridRange g = cfg.grid();
  Tensor<T> out(q.shape());
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] < g.min || q[i] > g.max)
      throw ConfigError("dequantize: level " + std::to_string(q[i]) + " outside grid [" + std::to_string(g.min) +
                        ", " + std::to_string(g.max) + "]");
    const std::size_t c = ch(i);
    out[i] = static_cast<T>(cfg.scale[c] * static_cast<double>(q[i] - cfg.zero_point[c]));
  }
  return out;
}

/// dequantize(quantize(x)) in one pass.
template <class T>
Tensor<T> fake_quantize_values(const Tensor<T>& x, const QuantConfig& cfg) {
  cfg.validate();
  const auto ch = detail::channel_indexer(cfg, x.shape());
  const GridRange g = cfg.grid();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x[i]);
    if (!std::isfinite(v)) throw NumericError("fake_quantize: non-finite input at element " + std::to_string(i));
    const std::size_t c = ch(i);
    const std::int64_t q = detail::quantize_scalar(v, cfg.scale[c], cfg.zero_point[c], g);
    out[i] = static_cast<T>(cfg.scale[c] * static_cast<double>(q - cfg.zero_point[c]));
  }
  return out;
}

/// Clipped STE mask: 1 where alpha <= x <= beta, else 0.
template <class T>
Tensor<T> ste_mask(const Tensor<T>& x, const QuantConfig& cfg) {
  const auto ch = detail::channel_indexer(cfg, x.shape());
  Tensor<T> mask(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = ch(i);
    const double v = static_cast<double>(x[i]);
    mask[i] = (v >= cfg.alpha(c) && v <= cfg.beta(c)) ? T{1} : T{0};
  }
  return mask;
}

template <class T>
CustomRule<T> fake_quantize_rule(QuantConfig cfg) {
  auto shared = std::make_shared<const QuantConfig>(std::move(cfg));
  return unary_rule<T>([shared](const Tensor<T>& x) { return fake_quantize_values(x, *shared); },
                       [shared](const Tensor<T>& g, const Tensor<T>& x, const Tensor<T>&) {
                         return ops::mul(g, ste_mask(x, *shared));
                       });
}

namespace ad {

template <class T>
Var<T> fake_quantize(Var<T> x, const QuantConfig& cfg) {
  return apply_custom(fake_quantize_rule<T>(cfg), x);
}

}  // namespace ad

/// Running activation range, updated by exponential moving average.
struct CalibState {
  double running_min = 0.0;
  double running_max = 0.0;
  double momentum = 0.99;
  bool initialized = false;
  bool frozen = false;

  friend bool operator==(const CalibState&, const CalibState&) = default;
};

/// m <- momentum * m + (1 - momentum) * batch_extremum; the first observation
/// initializes the state directly.
template <class T>
CalibState calibrate_update(CalibState state, const Tensor<T>& observed) {
  if (state.frozen) throw ConfigError("calibrate_update: calibration state is frozen");
  if (!(state.momentum >= 0.0 && state.momentum <= 1.0)) throw ConfigError("calibrate_update: momentum outside [0, 1]");
  double lo = INFINITY, hi = -INFINITY;
  for (const T& v : observed.data()) {
    const double d = static_cast<double>(v);
    if (!std::isfinite(d)) throw NumericError("calibrate_update: non-finite activation");
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  if (!state.initialized) {
    state.running_min = lo;
    state.running_max = hi;
    state.initialized = true;
    return state;
  }
  state.running_min = state.momentum * state.running_min + (1.0 - state.momentum) * lo;
  state.running_max = state.momentum * state.running_max + (1.0 - state.momentum) * hi;
  return state;
}

}  // namespace noisynet
