#pragma once

// On-disk formats.
//
// Checkpoint (little-endian):
//   [0, 8)    magic "NOISYNET"
//   [8, 12)   u32 format version
//   [12, 16)  u32 reserved (0)
//   [16, 24)  u64 header length H
//   [24, 32)  u64 payload length P
//   [32, 40)  u64 FNV-1a 64 checksum of bytes [64, 64 + align64(H) + P)
//   [40, 64)  zero
//   [64, ..)  header: canonical key=value text, zero-padded to a 64-byte boundary
//   payload:  float32 arrays, each starting on a 64-byte boundary (offsets in the header)
//
// Sweep CSV, history CSV and fit summaries are plain text with shortest
// round-trip decimal formatting, independent of the process locale.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "noisynet/errors.hpp"
#include "noisynet/model_spec.hpp"
#include "noisynet/network.hpp"
#include "noisynet/quant_plan.hpp"
#include "noisynet/robustness.hpp"
#include "noisynet/tensor.hpp"
#include "noisynet/text.hpp"
#include "noisynet/training.hpp"

namespace noisynet {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'N', 'O', 'I', 'S', 'Y', 'N', 'E', 'T'};

inline std::uint64_t fnv1a64(const unsigned char* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text_file(const std::filesystem::path& path, const std::string& body) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Checkpoints

struct NamedTensor {
  std::string name;
  Tensor<float> value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ModelSpec spec;
  QuantOptions quant;
  std::vector<CalibState> calibration;
  std::vector<NamedTensor> tensors;
  TrainConfig train;
  std::uint64_t seed = 0;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

template <class T>
Checkpoint make_checkpoint(const Model<T>& model, const TrainConfig& train, std::uint64_t seed) {
  Checkpoint c;
  c.spec = model.spec;
  c.quant = model.quant.options;
  c.calibration = model.quant.calibration;
  for (std::size_t k = 0; k < model.params.size(); ++k)
    c.tensors.push_back({model.param_info[k].name, model.params[k].template cast<float>()});
  c.train = train;
  c.seed = seed;
  return c;
}

template <class T = float>
Model<T> model_from_checkpoint(const Checkpoint& c) {
  Model<T> m;
  m.spec = c.spec;
  m.param_info = c.spec.parameters();
  if (m.param_info.size() != c.tensors.size()) throw DataError("checkpoint: parameter count does not match the model");
  for (std::size_t k = 0; k < c.tensors.size(); ++k) {
    if (c.tensors[k].name != m.param_info[k].name || c.tensors[k].value.shape() != m.param_info[k].shape)
      throw DataError("checkpoint: tensor '" + c.tensors[k].name + "' does not match parameter '" + m.param_info[k].name + "'");
    m.params.push_back(c.tensors[k].value.template cast<T>());
  }
  m.quant = make_quantizers(c.spec, c.quant);
  if (c.quant.enabled) {
    if (c.calibration.size() != m.quant.calibration.size()) throw DataError("checkpoint: calibration table size mismatch");
    m.quant.calibration = c.calibration;
  }
  return m;
}

namespace detail {

inline std::size_t align64(std::size_t n) { return (n + 63) / 64 * 64; }

inline void put_u32(std::string& s, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s[at + i] = static_cast<char>((v >> (8 * i)) & 0xFF);
}
inline void put_u64(std::string& s, std::size_t at, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s[at + i] = static_cast<char>((v >> (8 * i)) & 0xFF);
}
inline std::uint32_t get_u32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<unsigned char>(s[at + i])} << (8 * i);
  return v;
}
inline std::uint64_t get_u64(const std::string& s, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(s[at + i])} << (8 * i);
  return v;
}

inline std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

inline Shape parse_shape_text(const std::string& s, const std::string& what) {
  Shape out;
  for (const auto& d : text::split(s, 'x')) out.push_back(text::parse_u64(d, what));
  return out;
}

inline void put_train_config(text::KeyValues& kv, const TrainConfig& t, const std::string& p) {
  kv.set(p + "epochs", std::to_string(t.epochs));
  kv.set(p + "batch_size", std::to_string(t.batch_size));
  kv.set(p + "lr", t.lr);
  kv.set(p + "beta1", t.beta1);
  kv.set(p + "beta2", t.beta2);
  kv.set(p + "eps", t.eps);
  kv.set(p + "sigma_train", t.sigma_train);
  kv.set(p + "seed", std::to_string(t.seed));
  kv.set(p + "eval_batch", std::to_string(t.eval_batch));
  kv.set(p + "noise_before_quant", text::format_bool(t.noise_before_quant));
  kv.set(p + "monitor_noisy", text::format_bool(t.monitor_noisy));
}

inline TrainConfig get_train_config(const text::KeyValues& kv, const std::string& p) {
  TrainConfig t;
  t.epochs = text::parse_u64(kv.get(p + "epochs"), p + "epochs");
  t.batch_size = text::parse_u64(kv.get(p + "batch_size"), p + "batch_size");
  t.lr = text::parse_double(kv.get(p + "lr"), p + "lr");
  t.beta1 = text::parse_double(kv.get(p + "beta1"), p + "beta1");
  t.beta2 = text::parse_double(kv.get(p + "beta2"), p + "beta2");
  t.eps = text::parse_double(kv.get(p + "eps"), p + "eps");
  t.sigma_train = text::parse_double(kv.get(p + "sigma_train"), p + "sigma_train");
  t.seed = text::parse_u64(kv.get(p + "seed"), p + "seed");
  t.eval_batch = text::parse_u64(kv.get(p + "eval_batch"), p + "eval_batch");
  t.noise_before_quant = text::parse_bool(kv.get(p + "noise_before_quant"), p + "noise_before_quant");
  t.monitor_noisy = text::parse_bool(kv.get(p + "monitor_noisy"), p + "monitor_noisy");
  return t;
}

inline void put_quant_options(text::KeyValues& kv, const QuantOptions& q, const std::string& p) {
  kv.set(p + "enabled", text::format_bool(q.enabled));
  kv.set(p + "bits", std::to_string(q.bits));
  kv.set(p + "activation_scaling", q.activation_scaling == ScalingMode::Dynamic ? "dynamic" : "constant");
  kv.set(p + "constant_scale", q.constant_scale);
  kv.set(p + "quantize_input", text::format_bool(q.quantize_input));
  kv.set(p + "momentum", q.momentum);
}

inline QuantOptions get_quant_options(const text::KeyValues& kv, const std::string& p) {
  QuantOptions q;
  q.enabled = text::parse_bool(kv.get(p + "enabled"), p + "enabled");
  q.bits = static_cast<int>(text::parse_u64(kv.get(p + "bits"), p + "bits"));
  const std::string mode = kv.get(p + "activation_scaling");
  if (mode != "dynamic" && mode != "constant") throw DataError(p + "activation_scaling: unknown mode '" + mode + "'");
  q.activation_scaling = mode == "dynamic" ? ScalingMode::Dynamic : ScalingMode::Constant;
  q.constant_scale = text::parse_double(kv.get(p + "constant_scale"), p + "constant_scale");
  q.quantize_input = text::parse_bool(kv.get(p + "quantize_input"), p + "quantize_input");
  q.momentum = text::parse_double(kv.get(p + "momentum"), p + "momentum");
  return q;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& c) {
  text::KeyValues kv;
  kv.set("format_version", std::to_string(c.version));
  kv.set("seed", std::to_string(c.seed));
  detail::put_quant_options(kv, c.quant, "quant.");
  kv.set("calib.count", std::to_string(c.calibration.size()));
  for (std::size_t i = 0; i < c.calibration.size(); ++i) {
    const CalibState& s = c.calibration[i];
    kv.set("calib." + std::to_string(i), text::format_double(s.running_min) + "," + text::format_double(s.running_max) +
                                              "," + text::format_double(s.momentum) + "," +
                                              text::format_bool(s.initialized) + "," + text::format_bool(s.frozen));
  }
  detail::put_train_config(kv, c.train, "train.");
  const auto spec_lines = text::split(serialize_spec(c.spec), '\n');
  std::size_t n_spec = 0;
  for (const auto& l : spec_lines)
    if (!l.empty()) kv.set("spec." + std::to_string(n_spec++), l);
  kv.set("spec.count", std::to_string(n_spec));

  std::size_t offset = 0;
  kv.set("tensor.count", std::to_string(c.tensors.size()));
  for (std::size_t k = 0; k < c.tensors.size(); ++k) {
    const auto& t = c.tensors[k];
    if (t.name.find_first_of(" =\n") != std::string::npos) throw ConfigError("checkpoint: bad tensor name '" + t.name + "'");
    kv.set("tensor." + std::to_string(k), t.name + " " + detail::shape_text(t.value.shape()) + " " + std::to_string(offset));
    offset = detail::align64(offset + t.value.size() * 4);
  }
  const std::string header = kv.str();
  const std::size_t payload_start = 64 + detail::align64(header.size());
  std::string out(payload_start + offset, '\0');
  std::memcpy(out.data(), kCheckpointMagic, 8);
  detail::put_u32(out, 8, c.version);
  detail::put_u64(out, 16, header.size());
  detail::put_u64(out, 24, offset);
  std::memcpy(out.data() + 64, header.data(), header.size());
  std::size_t at = payload_start;
  for (const auto& t : c.tensors) {
    for (float v : t.value.data()) {
      detail::put_u32(out, at, std::bit_cast<std::uint32_t>(v));
      at += 4;
    }
    at = payload_start + detail::align64(at - payload_start);
  }
  const auto* bytes = reinterpret_cast<const unsigned char*>(out.data());
  detail::put_u64(out, 32, fnv1a64(bytes + 64, out.size() - 64));
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 64) throw DataError("checkpoint: truncated (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) throw DataError("checkpoint: bad magic");
  const std::uint32_t version = detail::get_u32(bytes, 8);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: format version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  const std::uint64_t header_len = detail::get_u64(bytes, 16);
  const std::uint64_t payload_len = detail::get_u64(bytes, 24);
  if (header_len > bytes.size() || payload_len > bytes.size() ||
      64 + detail::align64(header_len) + payload_len != bytes.size())
    throw DataError("checkpoint: truncated or oversized file");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (fnv1a64(raw + 64, bytes.size() - 64) != detail::get_u64(bytes, 32))
    throw DataError("checkpoint: integrity check failed (checksum mismatch)");

  const auto kv = text::KeyValues::parse(bytes.substr(64, header_len), "checkpoint header");
  Checkpoint c;
  c.version = static_cast<std::uint32_t>(text::parse_u64(kv.get("format_version"), "format_version"));
  if (c.version != version) throw DataError("checkpoint: header version disagrees with the container");
  c.seed = text::parse_u64(kv.get("seed"), "seed");
  c.quant = detail::get_quant_options(kv, "quant.");
  const std::size_t n_calib = text::parse_u64(kv.get("calib.count"), "calib.count");
  for (std::size_t i = 0; i < n_calib; ++i) {
    const auto f = text::split(kv.get("calib." + std::to_string(i)), ',');
    if (f.size() != 5) throw DataError("checkpoint: malformed calibration entry " + std::to_string(i));
    c.calibration.push_back({text::parse_double(f[0], "calib"), text::parse_double(f[1], "calib"),
                             text::parse_double(f[2], "calib"), text::parse_bool(f[3], "calib"),
                             text::parse_bool(f[4], "calib")});
  }
  c.train = detail::get_train_config(kv, "train.");
  std::string spec_text;
  const std::size_t n_spec = text::parse_u64(kv.get("spec.count"), "spec.count");
  for (std::size_t i = 0; i < n_spec; ++i) spec_text += kv.get("spec." + std::to_string(i)) + "\n";
  c.spec = parse_spec(spec_text);

  const auto params = c.spec.parameters();
  const std::size_t n_tensors = text::parse_u64(kv.get("tensor.count"), "tensor.count");
  if (n_tensors != params.size())
    throw DataError("checkpoint: shape table lists " + std::to_string(n_tensors) + " tensors, model has " +
                    std::to_string(params.size()));
  const std::size_t payload_start = 64 + detail::align64(header_len);
  std::size_t expected_offset = 0;
  for (std::size_t k = 0; k < n_tensors; ++k) {
    const auto f = text::split(kv.get("tensor." + std::to_string(k)), ' ');
    if (f.size() != 3) throw DataError("checkpoint: malformed shape-table entry " + std::to_string(k));
    const Shape shape = detail::parse_shape_text(f[1], "tensor shape");
    const std::size_t offset = text::parse_u64(f[2], "tensor offset");
    if (f[0] != params[k].name || shape != params[k].shape)
      throw DataError("checkpoint: shape-table entry '" + f[0] + "' " + shape_string(shape) + " inconsistent with '" +
                      params[k].name + "' " + shape_string(params[k].shape));
    if (offset != expected_offset) throw DataError("checkpoint: shape-table offset of '" + f[0] + "' is inconsistent");
    const std::size_t count = shape_size(shape);
    if (offset + count * 4 > payload_len) throw DataError("checkpoint: tensor '" + f[0] + "' exceeds the payload");
    std::vector<float> values(count);
    for (std::size_t i = 0; i < count; ++i)
      values[i] = std::bit_cast<float>(detail::get_u32(bytes, payload_start + offset + 4 * i));
    c.tensors.push_back({f[0], Tensor<float>(shape, std::move(values))});
    expected_offset = detail::align64(offset + count * 4);
  }
  if (expected_offset != payload_len) throw DataError("checkpoint: payload length disagrees with the shape table");
  if (c.quant.enabled && c.calibration.size() != enumerate_injection_sites(c.spec).size())
    throw DataError("checkpoint: calibration table does not match the model's sites");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_text_file(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_text_file(path)); }

// ---------------------------------------------------------------------------
// Training history

inline const char* kHistoryHeader = "epoch,lr,train_loss,train_accuracy,test_accuracy,test_accuracy_noisy";

inline std::string format_history_csv(const TrainHistory& h) {
  std::string out = std::string(kHistoryHeader) + "\n";
  for (const auto& e : h.epochs)
    out += std::to_string(e.epoch) + "," + text::format_double(e.lr) + "," + text::format_double(e.train_loss) + "," +
           text::format_double(e.train_accuracy) + "," + text::format_double(e.test_accuracy) + "," +
           text::format_double(e.test_accuracy_noisy) + "\n";
  return out;
}

inline TrainHistory parse_history_csv(const std::string& body) {
  std::istringstream in(body);
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != kHistoryHeader) throw DataError("history.csv:1: unexpected header");
  TrainHistory h;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(text::trim(line), ',');
    const std::string where = "history.csv:" + std::to_string(lineno);
    if (f.size() != 6) throw DataError(where + ": expected 6 fields");
    h.epochs.push_back({text::parse_u64(f[0], where), text::parse_double(f[1], where), text::parse_double(f[2], where),
                        text::parse_double(f[3], where), text::parse_double(f[4], where),
                        text::parse_double(f[5], where)});
  }
  return h;
}

// ---------------------------------------------------------------------------
// Sweep CSV

inline const char* kSweepHeader = "sigma,repeat,accuracy,seed,model_id,quant_mode,scale_factor,bit_width,noise_model,placement";

inline std::string format_sweep_csv(const SweepResult& s) {
  std::string out = std::string(kSweepHeader) + "\n";
  const SweepMeta& m = s.meta;
  const std::string tail = std::to_string(m.seed) + "," + m.model_id + "," + m.quant_mode + "," +
                           text::format_double(m.scale_factor) + "," + std::to_string(m.bit_width) + "," +
                           to_string(m.noise_model) + "," + to_string(m.placement);
  for (const auto& r : s.rows)
    out += text::format_double(r.sigma) + "," + std::to_string(r.repeat) + "," + text::format_double(r.accuracy) + "," +
           tail + "\n";
  return out;
}

/// Parses a sweep CSV; errors name the offending line. meta.n_test is not
/// part of the format and comes back as 0.
inline SweepResult parse_sweep_csv(const std::string& body, const std::string& source = "sweep.csv") {
  std::istringstream in(body);
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != kSweepHeader)
    throw DataError(source + ":1: header must be exactly '" + std::string(kSweepHeader) + "'");
  SweepResult s;
  std::size_t lineno = 1;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = text::trim(line);
    if (t.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto f = text::split(t, ',');
    if (f.size() != 10) throw DataError(where + ": expected 10 fields, got " + std::to_string(f.size()));
    SweepRow row{text::parse_double(f[0], where), text::parse_u64(f[1], where), text::parse_double(f[2], where)};
    SweepMeta m;
    m.seed = text::parse_u64(f[3], where);
    m.model_id = f[4];
    m.quant_mode = f[5];
    m.scale_factor = text::parse_double(f[6], where);
    m.bit_width = static_cast<int>(text::parse_u64(f[7], where));
    try {
      m.noise_model = parse_noise_model(f[8]);
      m.placement = parse_placement(f[9]);
    } catch (const ConfigError& e) {
      throw DataError(where + ": " + e.what());
    }
    if (!(row.accuracy >= 0.0 && row.accuracy <= 1.0)) throw DataError(where + ": accuracy outside [0, 1]");
    if (first) {
      s.meta = m;
      first = false;
    } else if (!(m == s.meta)) {
      throw DataError(where + ": metadata differs from the first row");
    }
    s.rows.push_back(row);
  }
  if (s.rows.empty()) throw DataError(source + ": no data rows");
  return s;
}

// ---------------------------------------------------------------------------
// Fit summaries

struct FitSummary {
  LogisticFit fit;
  SweepMeta meta;
  double peak_accuracy = 0.0;
};

inline std::string format_fit_summary(const FitSummary& f) {
  text::KeyValues kv;
  kv.set("format", "noisynet-fit 1");
  kv.set("model_id", f.meta.model_id);
  kv.set("quant_mode", f.meta.quant_mode);
  kv.set("scale_factor", f.meta.scale_factor);
  kv.set("bit_width", std::to_string(f.meta.bit_width));
  kv.set("noise_model", to_string(f.meta.noise_model));
  kv.set("placement", to_string(f.meta.placement));
  kv.set("seed", std::to_string(f.meta.seed));
  kv.set("peak_accuracy", f.peak_accuracy);
  kv.set("mu", f.fit.mu);
  kv.set("s", f.fit.s);
  kv.set("delta_a", f.fit.da);
  kv.set("a_min", f.fit.a_min);
  kv.set("a_max", f.fit.a_max());
  kv.set("mu_std", f.fit.mu_std);
  std::string cov;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) cov += (i || j ? "," : "") + text::format_double(f.fit.covariance(i, j));
  kv.set("covariance", cov);
  kv.set("sse", f.fit.sse);
  kv.set("residual_norm", f.fit.residual_norm);
  kv.set("iterations", std::to_string(f.fit.iterations));
  kv.set("converged", text::format_bool(f.fit.converged));
  kv.set("dy_floor", f.fit.dy_floor);
  kv.set("points", std::to_string(f.fit.points));
  return kv.str();
}

inline FitSummary parse_fit_summary(const std::string& body, const std::string& source = "fit summary") {
  const auto kv = text::KeyValues::parse(body, source);
  if (kv.get("format") != "noisynet-fit 1") throw DataError(source + ": unknown format '" + kv.get("format") + "'");
  FitSummary f;
  f.meta.model_id = kv.get("model_id");
  f.meta.quant_mode = kv.get("quant_mode");
  f.meta.scale_factor = text::parse_double(kv.get("scale_factor"), "scale_factor");
  f.meta.bit_width = static_cast<int>(text::parse_u64(kv.get("bit_width"), "bit_width"));
  f.meta.noise_model = parse_noise_model(kv.get("noise_model"));
  f.meta.placement = parse_placement(kv.get("placement"));
  f.meta.seed = text::parse_u64(kv.get("seed"), "seed");
  f.peak_accuracy = text::parse_double(kv.get("peak_accuracy"), "peak_accuracy");
  f.fit.mu = text::parse_double(kv.get("mu"), "mu");
  f.fit.s = text::parse_double(kv.get("s"), "s");
  f.fit.da = text::parse_double(kv.get("delta_a"), "delta_a");
  f.fit.a_min = text::parse_double(kv.get("a_min"), "a_min");
  f.fit.mu_std = text::parse_double(kv.get("mu_std"), "mu_std");
  const auto cov = text::split(kv.get("covariance"), ',');
  if (cov.size() != 16) throw DataError(source + ": covariance needs 16 entries");
  for (int i = 0; i < 16; ++i) f.fit.covariance(i / 4, i % 4) = text::parse_double(cov[static_cast<std::size_t>(i)], "covariance");
  f.fit.sse = text::parse_double(kv.get("sse"), "sse");
  f.fit.residual_norm = text::parse_double(kv.get("residual_norm"), "residual_norm");
  f.fit.iterations = text::parse_u64(kv.get("iterations"), "iterations");
  f.fit.converged = text::parse_bool(kv.get("converged"), "converged");
  f.fit.dy_floor = text::parse_double(kv.get("dy_floor"), "dy_floor");
  f.fit.points = text::parse_u64(kv.get("points"), "points");
  return f;
}

// ---------------------------------------------------------------------------
// Comparison table

inline const char* kCompareHeader = "label,peak_accuracy,mu,mu_std,pareto_front";

inline std::string format_compare_csv(const std::vector<ParetoRow>& rows) {
  std::string out = std::string(kCompareHeader) + "\n";
  for (const auto& r : rows)
    out += r.entry.label + "," + text::format_double(r.entry.peak_accuracy) + "," + text::format_double(r.entry.mu) +
           "," + text::format_double(r.entry.mu_std) + "," + (r.on_front ? "1" : "0") + "\n";
  return out;
}

}  // namespace noisynet
