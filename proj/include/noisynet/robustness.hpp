#pragma once

// Noise sweeps and the midpoint noise level: accuracy is measured over a grid
// of noise levels, then a scaled and shifted logistic
//   F(sigma) = 2 / (1 + exp((sigma - mu) / s)) * da + a_min
// is fitted by weighted least squares. mu is where the curve sits halfway
// between its plateaus.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "noisynet/dataset.hpp"
#include "noisynet/errors.hpp"
#include "noisynet/network.hpp"
#include "noisynet/noise.hpp"
#include "noisynet/training.hpp"

namespace noisynet {

// ---------------------------------------------------------------------------
// Task pool

/// Runs fn(i) for i in [0, n) on `workers` threads. Each task writes only its
/// own slot, so results do not depend on scheduling. If tasks throw, the
/// exception of the lowest failing index is rethrown.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::vector<std::exception_ptr> errors(n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepRow {
  double sigma = 0.0;
  std::size_t repeat = 0;
  double accuracy = 0.0;
  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

struct SweepMeta {
  std::uint64_t seed = 0;
  std::string model_id;
  std::string quant_mode = "fp32";
  double scale_factor = 0.0;  // constant activation scale, 0 when not applicable
  int bit_width = 32;
  NoiseModel noise_model = NoiseModel::AdditiveActivation;
  Placement placement;
  std::size_t n_test = 0;
  friend bool operator==(const SweepMeta&, const SweepMeta&) = default;
};

struct SweepPoint {
  double sigma;
  double mean;
  double std;  // sample standard deviation, floored
};

struct SweepResult {
  std::vector<SweepRow> rows;
  SweepMeta meta;

  std::vector<double> sigmas() const {
    std::vector<double> s;
    for (const auto& r : rows)
      if (std::find(s.begin(), s.end(), r.sigma) == s.end()) s.push_back(r.sigma);
    std::sort(s.begin(), s.end());
    return s;
  }

  /// Checks the invariants: >= 2 distinct sigma, equal repeat counts, accuracy in [0, 1].
  void validate() const {
    std::map<double, std::size_t> counts;
    for (const auto& r : rows) {
      if (!(r.sigma >= 0.0) || !std::isfinite(r.sigma)) throw DataError("sweep: sigma must be finite and >= 0");
      if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0)) throw DataError("sweep: accuracy outside [0, 1]");
      ++counts[r.sigma];
    }
    if (counts.size() < 2) throw DataError("sweep: need at least two distinct sigma values");
    for (const auto& [s, c] : counts)
      if (c != counts.begin()->second) throw DataError("sweep: sigma values have unequal repeat counts");
  }

  /// Per-sigma mean and sample standard deviation (n - 1), floored at `floor`.
  std::vector<SweepPoint> aggregate(double floor) const {
    std::vector<SweepPoint> out;
    for (double s : sigmas()) {
      std::vector<double> acc;
      for (const auto& r : rows)
        if (r.sigma == s) acc.push_back(r.accuracy);
      double mean = 0.0;
      for (double a : acc) mean += a;
      mean /= static_cast<double>(acc.size());
      double var = 0.0;
      for (double a : acc) var += (a - mean) * (a - mean);
      const double sd = acc.size() > 1 ? std::sqrt(var / static_cast<double>(acc.size() - 1)) : 0.0;
      out.push_back({s, mean, std::max(sd, floor)});
    }
    return out;
  }

  std::size_t repeats() const {
    if (rows.empty()) return 0;
    std::size_t n = 0;
    for (const auto& r : rows) n += r.sigma == rows.front().sigma;
    return n;
  }
};

/// Default Delta-y floor: half an example's worth of accuracy.
inline double dy_floor(std::size_t n_test) { return n_test ? 0.5 / static_cast<double>(n_test) : 1e-6; }

/// n log-spaced values in [lo, hi], optionally preceded by a 0 anchor.
inline std::vector<double> log_grid(double lo, double hi, std::size_t n, bool zero_anchor = false) {
  if (!(lo > 0.0) || !(hi > lo) || n < 2) throw ConfigError("log_grid: need 0 < lo < hi and n >= 2");
  std::vector<double> g;
  if (zero_anchor) g.push_back(0.0);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i)
    g.push_back(i == 0 ? lo : i + 1 == n ? hi : std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1)));
  return g;
}

struct SweepConfig {
  std::vector<double> sigmas;
  std::size_t repeats = 10;
  NoiseModel noise_model = NoiseModel::AdditiveActivation;
  Placement placement;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t eval_batch = 500;
  bool noise_before_quant = false;

  void validate() const {
    if (sigmas.empty()) throw ConfigError("sweep: empty sigma grid");
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
      if (!(sigmas[i] >= 0.0) || !std::isfinite(sigmas[i])) throw ConfigError("sweep: sigma values must be finite and >= 0");
      if (i && !(sigmas[i] > sigmas[i - 1])) throw ConfigError("sweep: sigma grid must be strictly increasing");
    }
    if (repeats < 1) throw ConfigError("sweep: repeats must be >= 1");
    if (eval_batch < 1) throw ConfigError("sweep: eval_batch must be >= 1");
  }
};

/// Accuracy of one (sigma index, repeat) cell. Noise streams are derived from
/// (seed, sigma index, repeat) only.
template <class T>
double sweep_cell(const Model<T>& model, const Dataset& test, const SweepConfig& cfg, std::size_t si, std::size_t repeat) {
  const double sigma = cfg.sigmas[si];
  switch (cfg.noise_model) {
    case NoiseModel::AdditiveActivation: {
      NoiseSpec spec;
      spec.sigma = sigma;
      spec.placement = cfg.placement;
      spec.rng = RngStream(cfg.seed, stream_id(StreamRole::InferenceNoise, si, repeat, 0));
      ActivationNoise noise = ActivationNoise::from_spec(spec, enumerate_injection_sites(model.spec).size());
      return evaluate(model, test, &noise, cfg.eval_batch, cfg.noise_before_quant);
    }
    case NoiseModel::AdditiveWeight:
    case NoiseModel::MultiplicativeLogNormalWeight: {
      Model<T> copy = model;
      for (std::size_t k = 0; k < copy.params.size(); ++k) {
        if (!copy.param_info[k].is_weight) continue;
        if (!cfg.placement.global) {
          const auto sites = site_of_layer(copy.spec);
          const auto site = sites[copy.param_info[k].layer];
          if (!site || !cfg.placement.covers(*site)) continue;
        }
        RngStream rng(cfg.seed, stream_id(StreamRole::WeightNoise, si, repeat, k));
        copy.params[k] = cfg.noise_model == NoiseModel::AdditiveWeight
                             ? perturb_weights_additive(copy.params[k], sigma, rng)
                             : perturb_weights_lognormal(copy.params[k], sigma, rng);
      }
      return evaluate(copy, test, nullptr, cfg.eval_batch, cfg.noise_before_quant);
    }
  }
  throw ConfigError("sweep: unknown noise model");
}

template <class T>
SweepMeta describe(const Model<T>& model, const SweepConfig& cfg, std::size_t n_test) {
  SweepMeta m;
  m.seed = cfg.seed;
  m.model_id = model.spec.arch;
  m.quant_mode = quant_mode_name(model.quant.options);
  m.bit_width = model.quant.options.enabled ? model.quant.options.bits : 32;
  m.scale_factor = model.quant.options.enabled && model.quant.options.activation_scaling == ScalingMode::Constant
                       ? model.quant.options.constant_scale
                       : 0.0;
  m.noise_model = cfg.noise_model;
  m.placement = cfg.placement;
  m.n_test = n_test;
  return m;
}

/// Evaluates every (sigma, repeat) cell. Rows come out in (sigma, repeat)
/// order and are identical for any worker count.
template <class T>
SweepResult noise_sweep(const Model<T>& model, const Dataset& test, const SweepConfig& cfg) {
  cfg.validate();
  test.validate();
  check_placement(cfg.placement, model.spec);
  const std::size_t n = cfg.sigmas.size() * cfg.repeats;
  std::vector<double> acc(n);
  parallel_for(n, cfg.workers, [&](std::size_t task) {
    acc[task] = sweep_cell(model, test, cfg, task / cfg.repeats, task % cfg.repeats);
  });
  SweepResult out;
  out.meta = describe(model, cfg, test.size());
  for (std::size_t t = 0; t < n; ++t) out.rows.push_back({cfg.sigmas[t / cfg.repeats], t % cfg.repeats, acc[t]});
  return out;
}

/// Multi-retrain mode: repeat r is evaluated on models[r] (independently
/// initialized networks), each with its own noise streams.
template <class T>
SweepResult noise_sweep_retrained(const std::vector<const Model<T>*>& models, const Dataset& test, SweepConfig cfg) {
  if (models.empty()) throw ConfigError("sweep: no models");
  cfg.repeats = models.size();
  cfg.validate();
  test.validate();
  for (const auto* m : models) check_placement(cfg.placement, m->spec);
  const std::size_t n = cfg.sigmas.size() * cfg.repeats;
  std::vector<double> acc(n);
  parallel_for(n, cfg.workers, [&](std::size_t task) {
    const std::size_t r = task % cfg.repeats;
    acc[task] = sweep_cell(*models[r], test, cfg, task / cfg.repeats, r);
  });
  SweepResult out;
  out.meta = describe(*models.front(), cfg, test.size());
  for (std::size_t t = 0; t < n; ++t) out.rows.push_back({cfg.sigmas[t / cfg.repeats], t % cfg.repeats, acc[t]});
  return out;
}

/// Matched noisy-training mode: models[i] was trained at sigmas[i] and is
/// evaluated only there, over cfg.repeats noise draws.
template <class T>
SweepResult noise_sweep_matched(const std::vector<const Model<T>*>& models, const Dataset& test,
                                const SweepConfig& cfg) {
  cfg.validate();
  test.validate();
  if (models.size() != cfg.sigmas.size())
    throw ConfigError("sweep: " + std::to_string(models.size()) + " models for " + std::to_string(cfg.sigmas.size()) +
                      " sigma points");
  for (const auto* m : models) check_placement(cfg.placement, m->spec);
  const std::size_t n = cfg.sigmas.size() * cfg.repeats;
  std::vector<double> acc(n);
  parallel_for(n, cfg.workers, [&](std::size_t task) {
    const std::size_t si = task / cfg.repeats;
    acc[task] = sweep_cell(*models[si], test, cfg, si, task % cfg.repeats);
  });
  SweepResult out;
  out.meta = describe(*models.front(), cfg, test.size());
  for (std::size_t t = 0; t < n; ++t) out.rows.push_back({cfg.sigmas[t / cfg.repeats], t % cfg.repeats, acc[t]});
  return out;
}

// ---------------------------------------------------------------------------
// Logistic fit

inline double logistic(double sigma, double mu, double s, double da, double a_min) {
  return 2.0 / (1.0 + std::exp((sigma - mu) / s)) * da + a_min;
}

struct LogisticFit {
  double mu = 0.0, s = 1.0, da = 0.0, a_min = 0.0;
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();  // order (mu, s, da, a_min)
  double mu_std = 0.0;
  double sse = 0.0;            // weighted sum of squared residuals
  double residual_norm = 0.0;  // sqrt(sse)
  std::size_t iterations = 0;
  bool converged = false;
  double dy_floor = 0.0;
  std::size_t points = 0;

  double a_max() const { return a_min + 2.0 * da; }
  double operator()(double sigma) const { return logistic(sigma, mu, s, da, a_min); }
};

struct FitOptions {
  std::size_t max_iterations = 200;
  double tolerance = 1e-10;  // relative SSE change
  bool multi_start = true;   // extra starts with mu at every sigma of the sweep
};

namespace detail {

struct FitParams {
  double mu, u, da, a_min;  // s = exp(u)
};

struct FitBounds {
  double mu_max, u_min, u_max;
};

inline void clamp_params(FitParams& p, const FitBounds& b) {
  p.mu = std::clamp(p.mu, 0.0, b.mu_max);
  p.u = std::clamp(p.u, b.u_min, b.u_max);
  p.da = std::clamp(p.da, 0.0, 0.5);
  p.a_min = std::clamp(p.a_min, 0.0, 1.0);
}

inline double weighted_sse(const std::vector<SweepPoint>& pts, const FitParams& p) {
  const double s = std::exp(p.u);
  double sse = 0.0;
  for (const auto& pt : pts) {
    const double r = (logistic(pt.sigma, p.mu, s, p.da, p.a_min) - pt.mean) / pt.std;
    sse += r * r;
  }
  return sse;
}

/// Weighted residuals and their Jacobian. With `in_s` the second column is
/// d/ds instead of d/du.
inline void residuals(const std::vector<SweepPoint>& pts, const FitParams& p, Eigen::VectorXd& r, Eigen::MatrixXd& J,
                      bool in_s = false) {
  const double s = std::exp(p.u);
  r.resize(static_cast<Eigen::Index>(pts.size()));
  J.resize(static_cast<Eigen::Index>(pts.size()), 4);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& pt = pts[i];
    const double z = (pt.sigma - p.mu) / s;
    const double w = 1.0 / (1.0 + std::exp(z));  // logistic factor L = 2w
    const double dw = w * (1.0 - w);             // -dw/dz
    const double inv = 1.0 / pt.std;
    const Eigen::Index k = static_cast<Eigen::Index>(i);
    r(k) = (2.0 * w * p.da + p.a_min - pt.mean) * inv;
    const double dF_dmu = p.da * 2.0 * dw / s;
    const double dF_ds = p.da * 2.0 * dw * (pt.sigma - p.mu) / (s * s);
    J(k, 0) = dF_dmu * inv;
    J(k, 1) = (in_s ? dF_ds : dF_ds * s) * inv;
    J(k, 2) = 2.0 * w * inv;
    J(k, 3) = inv;
  }
}

struct LmOutcome {
  FitParams p;
  double sse;
  std::size_t iterations;
  bool converged;
};

inline LmOutcome levenberg_marquardt(const std::vector<SweepPoint>& pts, FitParams p, const FitBounds& b,
                                     const FitOptions& opt) {
  clamp_params(p, b);
  double sse = weighted_sse(pts, p);
  double lambda = 1e-3;
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  std::size_t it = 0;
  for (; it < opt.max_iterations; ++it) {
    if (sse < 1e-28) return {p, sse, it, true};
    residuals(pts, p, r, J);
    const Eigen::Matrix4d A = J.transpose() * J;
    const Eigen::Vector4d g = J.transpose() * r;
    bool accepted = false;
    while (lambda < 1e20) {
      Eigen::Matrix4d M = A;
      for (int d = 0; d < 4; ++d) M(d, d) += lambda * std::max(A(d, d), 1e-12);
      const Eigen::Vector4d step = M.ldlt().solve(-g);
      FitParams q{p.mu + step(0), p.u + step(1), p.da + step(2), p.a_min + step(3)};
      clamp_params(q, b);
      const double sq = weighted_sse(pts, q);
      if (std::isfinite(sq) && sq < sse) {
        const double rel = (sse - sq) / std::max(sse, 1e-300);
        p = q;
        sse = sq;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        if (rel < opt.tolerance) return {p, sse, it + 1, true};
        break;
      }
      lambda *= 10.0;
    }
    // No downhill step at any damping: p is a (bounded) local minimum.
    if (!accepted) return {p, sse, it + 1, true};
  }
  return {p, sse, it, false};
}

}  // namespace detail

/// Weighted logistic fit of aggregated sweep points (sigma, mean, Delta-y).
inline LogisticFit fit_midpoint(const std::vector<SweepPoint>& pts, const FitOptions& opt = {}) {
  if (pts.size() < 2) throw FitError("fit: need at least two sweep points");
  double lo = pts.front().mean, hi = pts.front().mean;
  std::size_t i_lo = 0, i_hi = 0;
  double max_sigma = 0.0, min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!(pts[i].std > 0.0)) throw FitError("fit: Delta-y must be > 0 (apply a floor)");
    if (pts[i].mean < lo) lo = pts[i].mean, i_lo = i;
    if (pts[i].mean > hi) hi = pts[i].mean, i_hi = i;
    max_sigma = std::max(max_sigma, pts[i].sigma);
    if (i && pts[i].sigma - pts[i - 1].sigma > 0.0) min_gap = std::min(min_gap, pts[i].sigma - pts[i - 1].sigma);
    if (i && !(pts[i].sigma > pts[i - 1].sigma)) throw FitError("fit: sigma values must be strictly increasing");
  }
  if (!(max_sigma > 0.0)) throw FitError("fit: all sigma values are zero");
  // The drop must be resolvable: the extremes differ by more than their combined uncertainty.
  if (!(hi - lo > std::hypot(pts[i_lo].std, pts[i_hi].std)))
    throw FitError("no half-height crossing: accuracy range " + std::to_string(hi - lo) +
                   " is within the measurement uncertainty");

  // Initialization: plateau levels from the extremes, mu at the point nearest
  // half-height, s a quarter of the 80%-20% span.
  const double half = (hi + lo) / 2.0;
  std::size_t i_mid = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (std::abs(pts[i].mean - half) < std::abs(pts[i_mid].mean - half)) i_mid = i;
  auto first_below = [&](double level) {
    for (const auto& p : pts)
      if (p.mean <= level) return p.sigma;
    return pts.back().sigma;
  };
  const double s80 = first_below(lo + 0.8 * (hi - lo));
  const double s20 = first_below(lo + 0.2 * (hi - lo));
  const double s0 = std::max((s20 - s80) / 4.0, std::isfinite(min_gap) ? min_gap : max_sigma);

  const detail::FitBounds bounds{10.0 * max_sigma, std::log(1e-9 * max_sigma), std::log(10.0 * max_sigma)};
  std::vector<detail::FitParams> starts{{pts[i_mid].sigma, std::log(s0), (hi - lo) / 2.0, lo}};
  if (opt.multi_start)
    for (const auto& p : pts)
      if (p.sigma > 0.0 && p.sigma != pts[i_mid].sigma) starts.push_back({p.sigma, std::log(s0), (hi - lo) / 2.0, lo});

  detail::LmOutcome best{};
  best.sse = std::numeric_limits<double>::infinity();
  std::size_t total_iterations = 0;
  for (const auto& st : starts) {
    const auto out = detail::levenberg_marquardt(pts, st, bounds, opt);
    total_iterations += out.iterations;
    if (out.converged && out.sse < best.sse) best = out;
  }
  if (!std::isfinite(best.sse)) throw FitError("fit did not converge within " + std::to_string(opt.max_iterations) + " iterations");

  LogisticFit fit;
  fit.mu = best.p.mu;
  fit.s = std::exp(best.p.u);
  fit.da = best.p.da;
  fit.a_min = best.p.a_min;
  fit.sse = best.sse;
  fit.residual_norm = std::sqrt(best.sse);
  fit.iterations = total_iterations;
  fit.converged = true;
  fit.points = pts.size();

  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  detail::residuals(pts, best.p, r, J, true);
  const Eigen::Matrix4d A = J.transpose() * J;
  const double dof = pts.size() > 4 ? static_cast<double>(pts.size() - 4) : 1.0;
  fit.covariance = A.completeOrthogonalDecomposition().pseudoInverse() * (best.sse / dof);
  fit.mu_std = std::sqrt(std::max(fit.covariance(0, 0), 0.0));
  return fit;
}

inline LogisticFit fit_midpoint(const SweepResult& sweep, double floor, const FitOptions& opt = {}) {
  sweep.validate();
  if (sweep.repeats() < 2) throw FitError("fit: at least two repeats per sigma are needed for Delta-y");
  LogisticFit fit = fit_midpoint(sweep.aggregate(floor), opt);
  fit.dy_floor = floor;
  return fit;
}

inline LogisticFit fit_midpoint(const SweepResult& sweep, const FitOptions& opt = {}) {
  return fit_midpoint(sweep, dy_floor(sweep.meta.n_test), opt);
}

// ---------------------------------------------------------------------------
// Accuracy / robustness trade-off

struct ParetoEntry {
  std::string label;
  double peak_accuracy = 0.0;
  double mu = 0.0;
  double mu_std = 0.0;
};

struct ParetoRow {
  ParetoEntry entry;
  bool on_front = false;
};

/// a dominates b: at least as accurate and as robust, strictly better in one.
inline bool dominates(const ParetoEntry& a, const ParetoEntry& b) {
  return a.peak_accuracy >= b.peak_accuracy && a.mu >= b.mu && (a.peak_accuracy > b.peak_accuracy || a.mu > b.mu);
}

/// Rows sorted by peak accuracy (descending), then mu (descending), then label.
inline std::vector<ParetoRow> pareto_report(const std::vector<ParetoEntry>& entries) {
  std::vector<ParetoRow> rows;
  for (const auto& e : entries) {
    bool front = true;
    for (const auto& o : entries)
      if (dominates(o, e)) front = false;
    rows.push_back({e, front});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ParetoRow& a, const ParetoRow& b) {
    if (a.entry.peak_accuracy != b.entry.peak_accuracy) return a.entry.peak_accuracy > b.entry.peak_accuracy;
    if (a.entry.mu != b.entry.mu) return a.entry.mu > b.entry.mu;
    return a.entry.label < b.entry.label;
  });
  return rows;
}

/// Highest per-sigma mean accuracy of a sweep.
inline double peak_accuracy(const SweepResult& sweep) {
  double best = 0.0;
  for (const auto& p : sweep.aggregate(0.0)) best = std::max(best, p.mean);
  return best;
}

}  // namespace noisynet
