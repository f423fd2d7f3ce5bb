#pragma once

// Command-line front end: train, sweep, fit, compare, sites.
//
// Config precedence (later wins): preset, --config file, --set key=value,
// then the per-key flags (--epochs 20, --sigma_train 0.5, ...).
//
// Exit codes: 0 ok, 2 config, 3 data, 4 numeric, 5 fit.

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <locale>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "noisynet/config.hpp"
#include "noisynet/data_io.hpp"
#include "noisynet/errors.hpp"
#include "noisynet/network.hpp"
#include "noisynet/noise.hpp"
#include "noisynet/robustness.hpp"
#include "noisynet/training.hpp"

namespace noisynet::cli {

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Data: return 3;
    case ErrorKind::Numeric:
    case ErrorKind::Shape: return 4;
    case ErrorKind::Fit: return 5;
  }
  return 1;
}

namespace fs = std::filesystem;

inline std::string effective_config_text(const RunConfig& cfg) {
  RunConfig resolved = cfg;
  resolved.data_dir = cfg.resolved_data_dir().string();
  resolved.dataset = cfg.resolved_dataset();
  return "# noisynet effective config\n" + resolved.to_kv().str();
}

/// Human-facing log with wall-clock times; kept apart from the data files.
inline void log_line(const RunConfig& cfg, const std::string& msg) {
  fs::create_directories(cfg.out_dir);
  std::ofstream log(fs::path(cfg.out_dir) / "run.log", std::ios::app);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  log << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << " " << msg << "\n";
}

inline void begin_run(const RunConfig& cfg, const std::string& command) {
  fs::create_directories(cfg.out_dir);
  write_text_file(fs::path(cfg.out_dir) / "effective_config.txt", effective_config_text(cfg));
  log_line(cfg, command + " started");
}

inline void cmd_train(const RunConfig& cfg, std::ostream& out, bool dry_run = false) {
  cfg.validate();
  cfg.require_data();
  if (dry_run) {
    out << "dry run: config valid\n";
    return;
  }
  begin_run(cfg, "train");
  const DataSplit data = load_data(cfg);
  const TrainConfig tc = cfg.train_config();
  Model<float> model = make_model<float>(cfg.model_spec(), tc.seed, cfg.quant_options());
  const TrainHistory history = train(model, data.train, data.test, tc);
  save_checkpoint(fs::path(cfg.out_dir) / "checkpoint.bin", make_checkpoint(model, tc, tc.seed));
  write_text_file(fs::path(cfg.out_dir) / "history.csv", format_history_csv(history));
  const auto& last = history.epochs.back();
  out << "trained " << cfg.arch << " (" << count_params(model.spec) << " params) for " << tc.epochs
      << " epochs: test accuracy " << last.test_accuracy << ", noisy " << last.test_accuracy_noisy << "\n";
  log_line(cfg, "train finished");
}

inline void cmd_sweep(const RunConfig& cfg, const fs::path& checkpoint, std::ostream& out, bool dry_run = false) {
  cfg.validate();
  cfg.require_data();
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint '" + checkpoint.string() + "' does not exist");
  if (dry_run) {
    out << "dry run: config valid\n";
    return;
  }
  const Model<float> model = model_from_checkpoint<float>(load_checkpoint(checkpoint));
  const SweepConfig sc = cfg.sweep_config();
  check_placement(sc.placement, model.spec);
  begin_run(cfg, "sweep");
  const DataSplit data = load_data(cfg);
  if (data.test.sample_shape() != model.spec.input_shape)
    throw DataError("dataset samples " + shape_string(data.test.sample_shape()) + " do not fit checkpoint input " +
                    shape_string(model.spec.input_shape));
  const SweepResult sweep = noise_sweep(model, data.test, sc);
  write_text_file(fs::path(cfg.out_dir) / "sweep.csv", format_sweep_csv(sweep));
  out << "sweep: " << sweep.rows.size() << " rows (" << sc.sigmas.size() << " sigma x " << sc.repeats
      << " repeats) -> " << (fs::path(cfg.out_dir) / "sweep.csv").string() << "\n";
  log_line(cfg, "sweep finished");
}

inline double fit_floor(const RunConfig& cfg) {
  if (cfg.dy_floor > 0.0) return cfg.dy_floor;
  if (cfg.test_size > 0) return dy_floor(cfg.test_size);
  throw ConfigError("fit: set dy_floor or test_size so the Delta-y floor 1/(2 N_test) is defined");
}

inline FitSummary cmd_fit(const RunConfig& cfg, const fs::path& sweep_csv, std::ostream& out, bool dry_run = false) {
  if (!fs::exists(sweep_csv)) throw ConfigError("sweep file '" + sweep_csv.string() + "' does not exist");
  const double floor = fit_floor(cfg);
  if (dry_run) {
    out << "dry run: config valid\n";
    return {};
  }
  const SweepResult sweep = parse_sweep_csv(read_text_file(sweep_csv), sweep_csv.string());
  FitSummary summary;
  summary.fit = fit_midpoint(sweep, floor);
  summary.meta = sweep.meta;
  summary.peak_accuracy = peak_accuracy(sweep);
  begin_run(cfg, "fit");
  write_text_file(fs::path(cfg.out_dir) / "fit.txt", format_fit_summary(summary));
  out << "mu=" << text::format_double(summary.fit.mu) << " mu_std=" << text::format_double(summary.fit.mu_std)
      << " s=" << text::format_double(summary.fit.s) << " a_max=" << text::format_double(summary.fit.a_max())
      << " a_min=" << text::format_double(summary.fit.a_min) << "\n";
  log_line(cfg, "fit finished");
  return summary;
}

inline std::vector<ParetoRow> cmd_compare(const RunConfig& cfg, const std::vector<std::string>& files, std::ostream& out,
                                          bool dry_run = false) {
  if (files.empty()) throw ConfigError("compare: no fit summaries given");
  for (const auto& f : files)
    if (!fs::exists(f)) throw ConfigError("fit summary '" + f + "' does not exist");
  if (dry_run) {
    out << "dry run: config valid\n";
    return {};
  }
  std::vector<ParetoEntry> entries;
  for (const auto& f : files) {
    const FitSummary s = parse_fit_summary(read_text_file(f), f);
    std::string label = f;
    for (char& ch : label)
      if (ch == ',') ch = ';';
    entries.push_back({label, s.peak_accuracy, s.fit.mu, s.fit.mu_std});
  }
  const auto rows = pareto_report(entries);
  begin_run(cfg, "compare");
  write_text_file(fs::path(cfg.out_dir) / "compare.csv", format_compare_csv(rows));
  // console table at 6 significant digits; compare.csv keeps full precision
  const auto brief = [](double v) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << std::setprecision(6) << v;
    return os.str();
  };
  out << std::left << std::setw(40) << "config" << std::setw(12) << "peak_acc" << std::setw(12) << "mu" << std::setw(12)
      << "mu_std"
      << "front\n";
  for (const auto& r : rows)
    out << std::setw(40) << r.entry.label << std::setw(12) << brief(r.entry.peak_accuracy) << std::setw(12)
        << brief(r.entry.mu) << std::setw(12) << brief(r.entry.mu_std) << (r.on_front ? "*" : "") << "\n";
  return rows;
}

inline void cmd_sites(const RunConfig& cfg, std::ostream& out) {
  const ModelSpec spec = cfg.model_spec();
  const auto sites = enumerate_injection_sites(spec);
  out << "model " << spec.arch << " width=" << text::format_double(spec.width_scale)
      << " depth=" << text::format_double(spec.depth_scale) << "\n";
  for (const auto& s : sites)
    out << std::setw(4) << s.index << "  " << std::left << std::setw(10) << to_string(s.kind) << std::setw(10)
        << to_string(s.branch) << s.name << (s.branch == Branch::Skip ? "  [skip]" : "") << std::right << "\n";
  out << "sites: " << sites.size() << "\n";
}

/// Parses argv, runs the command and maps errors to exit codes.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Noise-robustness experiments for quantized convolutional networks"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  struct Common {
    std::string preset = "default";
    std::string config;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flags;
    bool dry_run = false;
  };
  std::map<std::string, Common> common;
  std::string checkpoint, sweep_file;
  std::vector<std::string> fit_files;

  const RunConfig defaults;
  auto add_common = [&](CLI::App* sub) {
    Common& c = common[sub->get_name()];
    sub->add_option("--preset", c.preset, "Preset: default, desk, paper");
    sub->add_option("--config", c.config, "key=value config file");
    sub->add_option("--set", c.sets, "Override: key=value (repeatable)");
    sub->add_flag("--dry-run", c.dry_run, "Validate the configuration and exit");
    for (const auto& [key, value] : defaults.to_kv().items) {
      sub->add_option_function<std::string>(
             "--" + key, [&c, key = key](const std::string& v) { c.flags[key] = v; },
             "config key (default " + (value.empty() ? std::string("empty") : value) + ")")
          ->group("Config keys");
    }
  };
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoint.bin and history.csv");
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Noise sweep of a checkpoint; writes sweep.csv");
  CLI::App* fit_cmd = app.add_subcommand("fit", "Fit the midpoint noise level to a sweep; writes fit.txt");
  CLI::App* compare_cmd = app.add_subcommand("compare", "Accuracy vs. mu table with Pareto flags; writes compare.csv");
  CLI::App* sites_cmd = app.add_subcommand("sites", "List the noise injection sites of a model");
  for (CLI::App* s : {train_cmd, sweep_cmd, fit_cmd, compare_cmd, sites_cmd}) add_common(s);
  sweep_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (default <out_dir>/checkpoint.bin)");
  fit_cmd->add_option("sweep", sweep_file, "Sweep CSV")->required();
  compare_cmd->add_option("fits", fit_files, "Fit summaries")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: category=config " << e.what() << "\n";
    return 2;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const Common& c = common[chosen->get_name()];
  try {
    RunConfig cfg = preset(c.preset);
    if (!c.config.empty()) cfg.apply(text::KeyValues::parse<ConfigError>(read_text_file(c.config), c.config));
    for (const auto& s : c.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      cfg.set(text::trim(s.substr(0, eq)), text::trim(s.substr(eq + 1)));
    }
    for (const auto& [k, v] : c.flags) cfg.set(k, v);

    if (chosen == train_cmd) cmd_train(cfg, out, c.dry_run);
    else if (chosen == sweep_cmd)
      cmd_sweep(cfg, checkpoint.empty() ? fs::path(cfg.out_dir) / "checkpoint.bin" : fs::path(checkpoint), out, c.dry_run);
    else if (chosen == fit_cmd) cmd_fit(cfg, sweep_file, out, c.dry_run);
    else if (chosen == compare_cmd) cmd_compare(cfg, fit_files, out, c.dry_run);
    else {
      cfg.validate();
      if (!c.dry_run) cmd_sites(cfg, out);
    }
  } catch (const Error& e) {
    err << "error: category=" << to_string(e.kind()) << " " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: category=data " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace noisynet::cli
