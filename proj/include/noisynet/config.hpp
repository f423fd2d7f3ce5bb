#pragma once

// Run configuration: canonical key=value text, presets and validation.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "noisynet/dataset.hpp"
#include "noisynet/errors.hpp"
#include "noisynet/model_spec.hpp"
#include "noisynet/noise.hpp"
#include "noisynet/quant_plan.hpp"
#include "noisynet/robustness.hpp"
#include "noisynet/text.hpp"
#include "noisynet/training.hpp"

namespace noisynet {

inline constexpr const char* kDataEnv = "NOISYNET_DATA";

struct RunConfig {
  // model
  std::string arch = "lenet5";
  double width = 1.0;
  double depth = 1.0;
  // data
  std::string dataset = "auto";  // auto | cifar10 | mnist5k
  std::string data_dir;          // empty: $NOISYNET_DATA
  std::size_t train_size = 0;    // 0: whole split
  std::size_t test_size = 0;
  std::uint64_t subset_seed = 0;
  // training
  TrainConfig train;
  // quantization
  std::string quant = "off";  // off | dynamic | constant
  int quant_bits = 8;
  double quant_scale = 1.0;
  bool quantize_input = false;
  double calib_momentum = 0.99;
  // noise and sweep
  std::string noise_model = "additive_activation";
  std::string placement = "global";
  std::string noise_order = "quant_then_noise";  // or noise_then_quant
  std::string sigmas;  // explicit comma list; empty: log grid below
  double sigma_min = 0.01;
  double sigma_max = 10.0;
  std::size_t sigma_points = 20;
  bool sigma_zero = true;
  std::size_t repeats = 10;
  std::uint64_t sweep_seed = 1;
  std::size_t workers = 1;
  double dy_floor = 0.0;  // 0: 1 / (2 * test set size)
  // output
  std::string out_dir = "run";

  text::KeyValues to_kv() const {
    text::KeyValues kv;
    kv.set("arch", arch);
    kv.set("width", width);
    kv.set("depth", depth);
    kv.set("dataset", dataset);
    kv.set("data_dir", data_dir);
    kv.set("train_size", std::to_string(train_size));
    kv.set("test_size", std::to_string(test_size));
    kv.set("subset_seed", std::to_string(subset_seed));
    kv.set("epochs", std::to_string(train.epochs));
    kv.set("batch_size", std::to_string(train.batch_size));
    kv.set("lr", train.lr);
    kv.set("beta1", train.beta1);
    kv.set("beta2", train.beta2);
    kv.set("eps", train.eps);
    kv.set("sigma_train", train.sigma_train);
    kv.set("seed", std::to_string(train.seed));
    kv.set("eval_batch", std::to_string(train.eval_batch));
    kv.set("monitor_noisy", text::format_bool(train.monitor_noisy));
    kv.set("quant", quant);
    kv.set("quant_bits", std::to_string(quant_bits));
    kv.set("quant_scale", quant_scale);
    kv.set("quantize_input", text::format_bool(quantize_input));
    kv.set("calib_momentum", calib_momentum);
    kv.set("noise_model", noise_model);
    kv.set("placement", placement);
    kv.set("noise_order", noise_order);
    kv.set("sigmas", sigmas);
    kv.set("sigma_min", sigma_min);
    kv.set("sigma_max", sigma_max);
    kv.set("sigma_points", std::to_string(sigma_points));
    kv.set("sigma_zero", text::format_bool(sigma_zero));
    kv.set("repeats", std::to_string(repeats));
    kv.set("sweep_seed", std::to_string(sweep_seed));
    kv.set("workers", std::to_string(workers));
    kv.set("dy_floor", dy_floor);
    kv.set("out_dir", out_dir);
    return kv;
  }

  /// Applies one key; unknown keys and malformed values are config errors.
  void set(const std::string& key, const std::string& v) {
    using text::parse_bool;
    using text::parse_double;
    using text::parse_u64;
    const std::string w = "config key '" + key + "'";
    if (key == "arch") arch = v;
    else if (key == "width") width = parse_double<ConfigError>(v, w);
    else if (key == "depth") depth = parse_double<ConfigError>(v, w);
    else if (key == "dataset") dataset = v;
    else if (key == "data_dir") data_dir = v;
    else if (key == "train_size") train_size = parse_u64<ConfigError>(v, w);
    else if (key == "test_size") test_size = parse_u64<ConfigError>(v, w);
    else if (key == "subset_seed") subset_seed = parse_u64<ConfigError>(v, w);
    else if (key == "epochs") train.epochs = parse_u64<ConfigError>(v, w);
    else if (key == "batch_size") train.batch_size = parse_u64<ConfigError>(v, w);
    else if (key == "lr") train.lr = parse_double<ConfigError>(v, w);
    else if (key == "beta1") train.beta1 = parse_double<ConfigError>(v, w);
    else if (key == "beta2") train.beta2 = parse_double<ConfigError>(v, w);
    else if (key == "eps") train.eps = parse_double<ConfigError>(v, w);
    else if (key == "sigma_train") train.sigma_train = parse_double<ConfigError>(v, w);
    else if (key == "seed") train.seed = parse_u64<ConfigError>(v, w);
    else if (key == "eval_batch") train.eval_batch = parse_u64<ConfigError>(v, w);
    else if (key == "monitor_noisy") train.monitor_noisy = parse_bool<ConfigError>(v, w);
    else if (key == "quant") quant = v;
    else if (key == "quant_bits") quant_bits = static_cast<int>(parse_u64<ConfigError>(v, w));
    else if (key == "quant_scale") quant_scale = parse_double<ConfigError>(v, w);
    else if (key == "quantize_input") quantize_input = parse_bool<ConfigError>(v, w);
    else if (key == "calib_momentum") calib_momentum = parse_double<ConfigError>(v, w);
    else if (key == "noise_model") noise_model = v;
    else if (key == "placement") placement = v;
    else if (key == "noise_order") noise_order = v;
    else if (key == "sigmas") sigmas = v;
    else if (key == "sigma_min") sigma_min = parse_double<ConfigError>(v, w);
    else if (key == "sigma_max") sigma_max = parse_double<ConfigError>(v, w);
    else if (key == "sigma_points") sigma_points = parse_u64<ConfigError>(v, w);
    else if (key == "sigma_zero") sigma_zero = parse_bool<ConfigError>(v, w);
    else if (key == "repeats") repeats = parse_u64<ConfigError>(v, w);
    else if (key == "sweep_seed") sweep_seed = parse_u64<ConfigError>(v, w);
    else if (key == "workers") workers = parse_u64<ConfigError>(v, w);
    else if (key == "dy_floor") dy_floor = parse_double<ConfigError>(v, w);
    else if (key == "out_dir") out_dir = v;
    else throw ConfigError("unknown config key '" + key + "'");
  }

  void apply(const text::KeyValues& kv) {
    for (const auto& [k, v] : kv.items) set(k, v);
  }

  static std::vector<std::string> keys() {
    std::vector<std::string> out;
    for (const auto& [k, v] : RunConfig{}.to_kv().items) out.push_back(k);
    return out;
  }

  QuantOptions quant_options() const {
    QuantOptions q;
    q.enabled = quant != "off";
    q.bits = quant_bits;
    q.activation_scaling = quant == "constant" ? ScalingMode::Constant : ScalingMode::Dynamic;
    q.constant_scale = quant_scale;
    q.quantize_input = quantize_input;
    q.momentum = calib_momentum;
    return q;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.noise_before_quant = noise_order == "noise_then_quant";
    return t;
  }

  std::vector<double> sigma_grid() const {
    if (!sigmas.empty()) {
      std::vector<double> g;
      for (const auto& s : text::split(sigmas, ',')) g.push_back(text::parse_double<ConfigError>(s, "sigmas"));
      return g;
    }
    return log_grid(sigma_min, sigma_max, sigma_points, sigma_zero);
  }

  SweepConfig sweep_config() const {
    SweepConfig s;
    s.sigmas = sigma_grid();
    s.repeats = repeats;
    s.noise_model = parse_noise_model(noise_model);
    s.placement = parse_placement(placement);
    s.seed = sweep_seed;
    s.workers = workers;
    s.eval_batch = train.eval_batch;
    s.noise_before_quant = noise_order == "noise_then_quant";
    return s;
  }

  std::filesystem::path resolved_data_dir() const {
    if (!data_dir.empty()) return data_dir;
    if (const char* env = std::getenv(kDataEnv); env && *env) return env;
    return {};
  }

  /// Dataset actually used: `auto` picks CIFAR-10 when its batches are present.
  std::string resolved_dataset() const {
    if (dataset != "auto") return dataset;
    const auto dir = resolved_data_dir();
    if (!dir.empty() && (std::filesystem::exists(dir / "cifar-10-batches-bin" / "test_batch.bin") ||
                         std::filesystem::exists(dir / "test_batch.bin")))
      return "cifar10";
    return "mnist5k";
  }

  Shape input_shape() const { return resolved_dataset() == "cifar10" ? Shape{3, 32, 32} : Shape{1, 28, 28}; }

  ModelSpec model_spec() const { return build_mini(arch, width, depth, input_shape(), 10); }

  /// Full validation, done before any work starts.
  void validate() const {
    if (std::find(known_architectures().begin(), known_architectures().end(), arch) == known_architectures().end())
      throw ConfigError("unknown arch '" + arch + "' (lenet5, vgg11, resnet18, resnet18-plain)");
    if (!(width > 0.0) || !(depth > 0.0)) throw ConfigError("width and depth must be > 0");
    if (dataset != "auto" && dataset != "cifar10" && dataset != "mnist5k")
      throw ConfigError("dataset must be auto, cifar10 or mnist5k");
    train_config().validate();
    if (quant != "off" && quant != "dynamic" && quant != "constant") throw ConfigError("quant must be off, dynamic or constant");
    quant_options().validate();
    parse_noise_model(noise_model);
    parse_placement(placement);
    if (noise_order != "quant_then_noise" && noise_order != "noise_then_quant")
      throw ConfigError("noise_order must be quant_then_noise or noise_then_quant");
    sweep_config().validate();
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (!(dy_floor >= 0.0)) throw ConfigError("dy_floor must be >= 0");
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
    check_placement(parse_placement(placement), model_spec());
  }

  void require_data() const {
    const auto dir = resolved_data_dir();
    if (dir.empty())
      throw ConfigError(std::string("missing dataset path: set data_dir or ") + kDataEnv);
    if (!std::filesystem::is_directory(dir)) throw ConfigError("dataset path '" + dir.string() + "' is not a directory");
  }
};

/// desk: 5k-image subset, 20 epochs. paper: full data, 500 epochs.
inline RunConfig preset(const std::string& name) {
  RunConfig c;
  if (name == "desk") {
    c.train_size = 4000;
    c.test_size = 1000;
    c.train.epochs = 20;
    c.train.batch_size = 32;
    c.width = 0.5;
    c.sigma_min = 0.01;
    c.sigma_max = 10.0;
    c.sigma_points = 20;
    c.sigma_zero = false;
    c.repeats = 10;
  } else if (name == "paper") {
    c.dataset = "cifar10";
    c.train.epochs = 500;
    c.train.batch_size = 128;
    c.sigma_min = 0.001;
    c.sigma_max = 10.0;
    c.sigma_points = 20;
    c.sigma_zero = true;
    c.repeats = 10;
    c.test_size = 10000;
  } else if (name != "default") {
    throw ConfigError("unknown preset '" + name + "' (desk, paper, default)");
  }
  return c;
}

/// Loads the split described by the config.
inline DataSplit load_data(const RunConfig& cfg) {
  cfg.require_data();
  const auto dir = cfg.resolved_data_dir();
  DataSplit split;
  if (cfg.resolved_dataset() == "cifar10") {
    const auto sub = std::filesystem::exists(dir / "cifar-10-batches-bin") ? dir / "cifar-10-batches-bin" : dir;
    split = load_cifar10(sub);
    if (cfg.train_size) split.train = select(split.train, stratified_indices(split.train, cfg.train_size, cfg.subset_seed), "train");
    if (cfg.test_size && cfg.test_size != split.test.size())
      split.test = select(split.test, stratified_indices(split.test, cfg.test_size, cfg.subset_seed, 1), "test");
  } else {
    const auto sub = std::filesystem::exists(dir / "mnist5k") ? dir / "mnist5k" : dir;
    const Dataset pool = load_mnist_idx(sub / "images-idx3-ubyte", sub / "labels-idx1-ubyte");
    const std::size_t n_test = cfg.test_size ? cfg.test_size : pool.size() / 5;
    const std::size_t n_train = cfg.train_size ? cfg.train_size : pool.size() - n_test;
    split = split_stratified(pool, n_train, n_test, cfg.subset_seed);
  }
  return split;
}

}  // namespace noisynet
