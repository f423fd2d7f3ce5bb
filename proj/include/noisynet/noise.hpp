#pragma once

// Noise models and injection sites.
//
// Site rule: the network input is site 0, then one site follows the output of
// every convolution, linear, activation and pooling layer, in layer order.
// Flatten, dropout and skip joins carry no site.
//
// Stream derivation (fixed for results-format version 1):
//   stream_id = role << 56 | sigma_index << 40 | repeat << 20 | site
// with 16/20/20-bit fields, so every (role, sigma, repeat, site) tuple owns a
// distinct Philox stream.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "noisynet/autodiff.hpp"
#include "noisynet/errors.hpp"
#include "noisynet/model_spec.hpp"
#include "noisynet/rng.hpp"
#include "noisynet/tensor.hpp"

namespace noisynet {

enum class NoiseModel { AdditiveActivation, AdditiveWeight, MultiplicativeLogNormalWeight };

inline const char* to_string(NoiseModel m) {
  switch (m) {
    case NoiseModel::AdditiveActivation: return "additive_activation";
    case NoiseModel::AdditiveWeight: return "additive_weight";
    case NoiseModel::MultiplicativeLogNormalWeight: return "lognormal_weight";
  }
  return "?";
}

inline NoiseModel parse_noise_model(const std::string& s) {
  if (s == "additive_activation") return NoiseModel::AdditiveActivation;
  if (s == "additive_weight") return NoiseModel::AdditiveWeight;
  if (s == "lognormal_weight") return NoiseModel::MultiplicativeLogNormalWeight;
  throw ConfigError("unknown noise model '" + s + "' (additive_activation, additive_weight, lognormal_weight)");
}

struct Placement {
  bool global = true;
  std::size_t site = 0;

  static Placement everywhere() { return {}; }
  static Placement single(std::size_t site) { return {false, site}; }
  bool covers(std::size_t s) const { return global || s == site; }

  friend bool operator==(const Placement&, const Placement&) = default;
};

inline std::string to_string(const Placement& p) {
  return p.global ? std::string("global") : "single:" + std::to_string(p.site);
}

inline Placement parse_placement(const std::string& s) {
  if (s == "global") return Placement::everywhere();
  if (s.rfind("single:", 0) == 0) {
    const std::string idx = s.substr(7);
    if (idx.empty() || idx.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("placement: bad site index in '" + s + "'");
    return Placement::single(std::stoull(idx));
  }
  throw ConfigError("placement must be 'global' or 'single:<index>', got '" + s + "'");
}

enum class StreamRole : std::uint64_t {
  InferenceNoise = 1,
  TrainingNoise = 2,
  WeightNoise = 3,
  Dropout = 4,
  Shuffle = 5,
  Init = 6,
  Subset = 7,
};

inline std::uint64_t stream_id(StreamRole role, std::uint64_t sigma_index, std::uint64_t repeat, std::uint64_t site) {
  if (sigma_index >= (1u << 16) || repeat >= (1u << 20) || site >= (1u << 20))
    throw ConfigError("stream index out of range (sigma < 65536, repeat and site < 1048576)");
  return (static_cast<std::uint64_t>(role) << 56) | (sigma_index << 40) | (repeat << 20) | site;
}

struct NoiseSpec {
  NoiseModel model = NoiseModel::AdditiveActivation;
  double sigma = 0.0;
  Placement placement;
  RngStream rng;  // base stream; site s draws from stream_id | s

  void validate() const {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("noise sigma must be finite and >= 0");
    if (rng.stream_id & 0xFFFFFu) throw ConfigError("noise base stream must leave the site bits clear");
  }
  RngStream site_stream(std::size_t site) const { return RngStream(rng.seed, rng.stream_id | site, rng.counter); }
};

// ---------------------------------------------------------------------------
// Sites

struct InjectionSite {
  std::size_t index;
  std::size_t layer;
  LayerKind kind;
  Branch branch;
  std::string name;
};

inline bool carries_site(LayerKind k) {
  return k == LayerKind::Input || k == LayerKind::Conv || k == LayerKind::Linear || k == LayerKind::ReLU ||
         k == LayerKind::MaxPool || k == LayerKind::AvgPool;
}

inline std::vector<InjectionSite> enumerate_injection_sites(const ModelSpec& spec) {
  std::vector<InjectionSite> sites;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (carries_site(l.kind)) sites.push_back({sites.size(), i, l.kind, l.branch, l.name});
  }
  return sites;
}

/// site index for each layer, or nullopt.
inline std::vector<std::optional<std::size_t>> site_of_layer(const ModelSpec& spec) {
  std::vector<std::optional<std::size_t>> out(spec.layers.size());
  for (const InjectionSite& s : enumerate_injection_sites(spec)) out[s.layer] = s.index;
  return out;
}

inline void check_placement(const Placement& p, const ModelSpec& spec) {
  if (p.global) return;
  const auto sites = enumerate_injection_sites(spec);
  if (p.site >= sites.size()) {
    std::string msg = "single-layer site " + std::to_string(p.site) + " out of range; valid sites for " + spec.arch +
                      " are 0.." + std::to_string(sites.size() - 1) + ":";
    for (const auto& s : sites) msg += " " + std::to_string(s.index) + "=" + s.name;
    throw ConfigError(msg);
  }
}

// ---------------------------------------------------------------------------
// Noise operations

/// Forward: a + N(0, sigma^2), fresh draws per call. Backward: identity.
template <class T>
CustomRule<T> activation_noise_rule(double sigma, RngStream& rng) {
  if (!(sigma >= 0.0)) throw ConfigError("activation noise: sigma must be >= 0");
  return unary_rule<T>(
      [sigma, &rng](const Tensor<T>& a) {
        Tensor<T> out(a.shape());
        fill_gaussian(rng, out.data(), 0.0, sigma);
        for (std::size_t i = 0; i < a.size(); ++i) out[i] += a[i];
        return out;
      },
      [](const Tensor<T>& g, const Tensor<T>&, const Tensor<T>&) { return g; });
}

namespace ad {

template <class T>
Var<T> inject_activation(Var<T> a, double sigma, RngStream& rng) {
  if (!(sigma >= 0.0)) throw ConfigError("activation noise: sigma must be >= 0");
  if (sigma == 0.0) return a;
  return apply_custom(activation_noise_rule<T>(sigma, rng), a);
}

}  // namespace ad

/// w + dw, dw ~ N(0, sigma^2 I).
template <class T>
Tensor<T> perturb_weights_additive(const Tensor<T>& w, double sigma, RngStream& rng) {
  if (!(sigma >= 0.0)) throw ConfigError("weight noise: sigma must be >= 0");
  if (sigma == 0.0) return w;
  Tensor<T> out(w.shape());
  fill_gaussian(rng, out.data(), 0.0, sigma);
  for (std::size_t i = 0; i < w.size(); ++i) out[i] += w[i];
  return out;
}

/// w * exp(lambda), lambda ~ N(0, sigma^2); signs are preserved.
template <class T>
Tensor<T> perturb_weights_lognormal(const Tensor<T>& w, double sigma, RngStream& rng) {
  if (!(sigma >= 0.0)) throw ConfigError("weight noise: sigma must be >= 0");
  if (sigma == 0.0) return w;
  std::vector<double> lambda(w.size());
  fill_gaussian(rng, std::span<double>(lambda), 0.0, sigma);
  Tensor<T> out(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = static_cast<T>(static_cast<double>(w[i]) * std::exp(lambda[i]));
  return out;
}

}  // namespace noisynet
