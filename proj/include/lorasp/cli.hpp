// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lorasp/checkpoint.hpp"
#include "lorasp/config.hpp"
#include "lorasp/csv.hpp"
#include "lorasp/spectral.hpp"
#include "lorasp/train.hpp"

namespace lorasp::cli {

namespace fs = std::filesystem;

// Exit codes: 0 success, 2 usage/config error, 3 numerical failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

struct Options {
  std::string subcommand;
  fs::path config_path;
  fs::path out_dir;                      // empty -> derived from LORASP_OUT_ROOT
  std::optional<std::uint64_t> seed;     // --seed override for train.seed
  std::size_t jobs = 1;
  bool resume = false;
  std::vector<double> etas;              // --etas override (analyze)
  std::string input;                     // analyze: checkpoint file or directory of .mat files
  std::vector<std::string> run_dirs;     // report inputs
  bool quiet = false;
};

inline fs::path out_root() {
  if (const char* env = std::getenv("LORASP_OUT_ROOT")) return fs::path(env);
  return fs::path("runs");
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad JSON in " + path.string() + ": " + e.what());
  }
}

inline CsvTable selection_log_table(const std::vector<SelectionLogRow>& rows) {
  CsvTable t;
  t.header = {"step", "layer", "input_id", "k", "energy_k", "spec_loss", "task"};
  for (const SelectionLogRow& row : rows)
    t.rows.push_back({std::to_string(row.step), row.layer, std::to_string(row.input_id),
                      std::to_string(row.k), csv_num(row.energy_k), csv_num(row.spec_loss), row.task});
  return t;
}

inline Checkpoint make_checkpoint(const std::string& kind, const nlohmann::json& config_echo,
                                  Model& model) {
  Checkpoint ckpt;
  ckpt.kind = kind;
  ckpt.config = config_echo;
  for (const auto& [name, value] : parameter_views(model)) {
    ckpt.names.push_back(name);
    ckpt.matrices[name] = *value;
  }
  return ckpt;
}

inline std::string run_summary_text(const std::string& kind, const RunMetrics& m) {
  std::ostringstream os;
  os << "kind: " << kind << "\n";
  os << "trainable params: " << m.trainable_params << " / " << m.total_params << " ("
     << csv_num(100.0 * m.trainable_fraction) << "%)\n";
  os << "wall seconds: " << csv_num(m.wall_seconds) << "\n";
  for (const auto& [task, loss] : m.final_val_loss)
    os << "val loss " << task << ": " << csv_num(loss) << "\n";
  for (const LayerRankStats& s : m.rank_stats)
    os << "mean active rank " << s.layer << ": " << csv_num(s.mean_k) << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Subcommands. Each returns the directory it wrote.

inline fs::path cmd_train(const CliRunConfig& cfg, const fs::path& out_dir) {
  const nlohmann::json echo = echo_config(cfg);
  const fs::path dir = out_dir.empty() ? out_root() / ("train-" + config_fingerprint(echo)) : out_dir;
  const TaskSuite suite = cfg.make_suite();
  Model model;
  RunMetrics metrics;
  try {
    metrics = train(suite, cfg.train, &model);
  } catch (const DivergenceError& e) {
    fs::create_directories(dir);
    write_json(dir / "divergence.json", {{"status", "diverged"}, {"error", e.what()}, {"config", echo}});
    throw;
  }

  fs::create_directories(dir);
  write_json(dir / "config.echo.json", echo);
  nlohmann::json mj = {{"status", "complete"},
                       {"kind", kind_name(cfg.train.kind)},
                       {"config", echo},
                       {"metrics", run_metrics_json(metrics)}};
  write_json(dir / "metrics.json", mj);
  write_csv(selection_log_table(metrics.selection_log), dir / "selections.csv");
  Checkpoint ckpt = make_checkpoint(kind_name(cfg.train.kind), echo, model);
  save_checkpoint(ckpt, dir / "checkpoint.lsp");
  write_text(dir / "summary.txt", run_summary_text(kind_name(cfg.train.kind), metrics));
  return dir;
}

inline bool cell_complete(const fs::path& cell_dir) {
  const fs::path mpath = cell_dir / "metrics.json";
  if (!fs::exists(mpath)) return false;
  try {
    return read_json(mpath).value("status", "") == "complete";
  } catch (const IoError&) {
    return false;
  }
}

inline RunMetrics metrics_from_json(const nlohmann::json& j) {
  RunMetrics m;
  const nlohmann::json& mm = j.at("metrics");
  m.steps = mm.value("steps", std::size_t{0});
  m.trainable_params = mm.value("trainable_params", std::size_t{0});
  m.total_params = mm.value("total_params", std::size_t{0});
  m.trainable_fraction = mm.value("trainable_fraction", 0.0);
  m.wall_seconds = mm.value("wall_seconds", 0.0);
  if (mm.contains("final_val_loss"))
    m.final_val_loss = mm.at("final_val_loss").get<std::map<std::string, double>>();
  if (mm.contains("final_train_loss"))
    m.final_train_loss = mm.at("final_train_loss").get<std::map<std::string, double>>();
  m.mean_active_rank = mm.value("mean_active_rank", 0.0);
  if (mm.contains("mean_active_rank_per_task"))
    m.mean_active_rank_per_task =
        mm.at("mean_active_rank_per_task").get<std::map<std::string, double>>();
  if (mm.contains("rank_stats")) {
    for (const auto& sj : mm.at("rank_stats")) {
      LayerRankStats s;
      s.layer = sj.at("layer").get<std::string>();
      s.mean_k = sj.value("mean_k", 0.0);
      s.min_k = sj.value("min", 0.0);
      s.lq_k = sj.value("lq", 0.0);
      s.median_k = sj.value("median", 0.0);
      s.uq_k = sj.value("uq", 0.0);
      s.max_k = sj.value("max", 0.0);
      if (sj.contains("mean_k_per_task"))
        s.mean_k_per_task = sj.at("mean_k_per_task").get<std::map<std::string, double>>();
      m.rank_stats.push_back(std::move(s));
    }
  }
  return m;
}

// Runs every sweep cell into <sweep dir>/<config-hash>/ and aggregates the
// rank-loss curve; --resume skips cells whose metrics.json is complete.
inline fs::path cmd_sweep(const CliRunConfig& cfg, const fs::path& out_dir, std::size_t jobs,
                          bool resume) {
  TrainConfig base = cfg.train;
  if (base.kind != AdapterKind::Lora)
    throw ConfigError("sweep: train.kind must be 'lora' (fixed-rank sweep)");
  const nlohmann::json echo = echo_config(cfg);
  const fs::path dir = out_dir.empty() ? out_root() / ("sweep-" + config_fingerprint(echo)) : out_dir;
  fs::create_directories(dir);
  write_json(dir / "config.echo.json", echo);

  const TaskSuite suite = cfg.make_suite();
  const std::vector<SweepJob> jobs_list =
      sweep_jobs(suite, cfg.sweep_ranks, base, cfg.sweep_single, cfg.sweep_multi);

  std::vector<RunMetrics> results(jobs_list.size());
  parallel_for(jobs_list.size(), jobs, [&](std::size_t i) {
    CliRunConfig cell_cfg = cfg;
    cell_cfg.train = jobs_list[i].config;
    const nlohmann::json cell_echo = echo_config(cell_cfg);
    const fs::path cell_dir = dir / config_fingerprint(cell_echo);
    if (resume && cell_complete(cell_dir)) {
      results[i] = metrics_from_json(read_json(cell_dir / "metrics.json"));
      return;
    }
    results[i] = train(suite, jobs_list[i].config);
    fs::create_directories(cell_dir);
    write_json(cell_dir / "config.echo.json", cell_echo);
    write_json(cell_dir / "metrics.json", {{"status", "complete"},
                                           {"kind", kind_name(jobs_list[i].config.kind)},
                                           {"regime", jobs_list[i].regime},
                                           {"config", cell_echo},
                                           {"metrics", run_metrics_json(results[i])}});
  });

  const RankSweepResult sweep = assemble_sweep(suite, jobs_list, results, cfg.sweep_single);
  CsvTable curve;
  curve.header = {"regime", "task", "rank", "val_loss", "full_ft_val_loss", "success"};
  for (const SweepCell& cell : sweep.cells)
    curve.rows.push_back({cell.regime, cell.task, std::to_string(cell.rank), csv_num(cell.val_loss),
                          csv_num(cell.full_ft_val_loss), cell.success ? "1" : "0"});
  write_csv(curve, dir / "curve.csv");

  nlohmann::json summary;
  for (const auto& [task, id] : sweep.intrinsic_dim) {
    summary["intrinsic_dimension"][task] =
        id ? nlohmann::json(*id) : nlohmann::json("infeasible at swept ranks");
    summary["epsilon"][task] = sweep.epsilon.at(task);
  }
  summary["status"] = "complete";
  write_json(dir / "sweep_summary.json", summary);
  return dir;
}

inline fs::path cmd_ablate(const CliRunConfig& cfg, const fs::path& out_dir, std::size_t jobs) {
  if (cfg.train.kind != AdapterKind::LoraSp)
    throw ConfigError("ablate: train.kind must be 'lorasp'");
  const nlohmann::json echo = echo_config(cfg);
  const fs::path dir = out_dir.empty() ? out_root() / ("ablate-" + config_fingerprint(echo)) : out_dir;
  const TaskSuite suite = cfg.make_suite();
  const AblationResult result = ablate(suite, cfg.train, cfg.ablate_axis, jobs);

  fs::create_directories(dir);
  write_json(dir / "config.echo.json", echo);
  CsvTable table;
  table.header = {"label", "eta", "with_spectral", "task", "val_loss", "mean_active_rank",
                  "mean_active_rank_task"};
  for (const AblationCell& cell : result.cells)
    for (const auto& [task, loss] : cell.final_val_loss)
      table.rows.push_back({cell.label, csv_num(cell.eta), cell.with_spectral ? "1" : "0", task,
                            csv_num(loss), csv_num(cell.mean_active_rank),
                            csv_num(cell.mean_active_rank_per_task.at(task))});
  write_csv(table, dir / "ablation.csv");
  return dir;
}

// Materializes per-layer update matrices from a checkpoint. The update is
// exact for lora/moe/full-ft; for lorasp the scores are input-conditioned,
// so the bank span u*v (unit scores) is reported and flagged in metadata.
inline std::map<std::string, Matrix> checkpoint_updates(const Checkpoint& ckpt, std::string* note) {
  std::map<std::string, Matrix> updates;
  const auto layer_names = [&] {
    std::set<std::string> names;
    for (const std::string& n : ckpt.names) names.insert(n.substr(0, n.find('.')));
    return names;
  }();
  if (ckpt.kind == "lora") {
    for (const std::string& layer : layer_names)
      updates[layer] = matmul(ckpt.matrices.at(layer + ".b"), ckpt.matrices.at(layer + ".a"));
  } else if (ckpt.kind == "moe-hard" || ckpt.kind == "moe-soft") {
    for (const std::string& name : ckpt.names) {
      const std::size_t dot = name.find('.');
      const std::string layer = name.substr(0, dot);
      const std::string rest = name.substr(dot + 1);
      if (rest.rfind("expert", 0) == 0 && name.size() > 2 && name.substr(name.size() - 2) == ".a") {
        const std::string expert = rest.substr(0, rest.find('.'));
        updates[layer + "#" + expert] = matmul(ckpt.matrices.at(layer + "." + expert + ".b"),
                                               ckpt.matrices.at(layer + "." + expert + ".a"));
      }
    }
  } else if (ckpt.kind == "full-ft") {
    const CliRunConfig cfg = parse_config(ckpt.config);
    const TaskSuite suite = cfg.make_suite();
    for (const std::string& layer : layer_names)
      updates[layer] = sub(ckpt.matrices.at(layer + ".weight"), suite.base.layer_weight(layer));
  } else if (ckpt.kind == "lorasp") {
    for (const std::string& layer : layer_names)
      updates[layer] = matmul(ckpt.matrices.at(layer + ".u"), ckpt.matrices.at(layer + ".v"));
    if (note) *note = "lorasp updates are input-conditioned; reported spectra are the unit-score bank span u*v";
  } else {
    throw ConfigError("analyze: unknown checkpoint kind '" + ckpt.kind + "'");
  }
  return updates;
}

inline fs::path cmd_analyze(const std::string& input, const std::vector<double>& etas,
                            const fs::path& out_dir) {
  for (double eta : etas)
    if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("analyze: etas must be in (0,1]");
  std::map<std::string, Matrix> updates;
  std::string note;
  const fs::path in_path(input);
  if (fs::is_directory(in_path)) {
    for (const auto& entry : fs::directory_iterator(in_path))
      if (entry.path().extension() == ".mat")
        updates[entry.path().stem().string()] = load_matrix(entry.path());
  } else if (fs::exists(in_path)) {
    updates = checkpoint_updates(load_checkpoint(in_path), &note);
  } else {
    throw ConfigError("analyze: no such file or directory: " + input);
  }
  if (updates.empty()) throw ConfigError("analyze: empty layer map in " + input);

  const SpectralReport report = layer_rank_report(updates, etas);
  fs::path dir = out_dir;
  if (dir.empty()) {
    nlohmann::json key = {{"input", input}, {"etas", etas}};
    dir = out_root() / ("analyze-" + config_fingerprint(key));
  }
  fs::create_directories(dir);
  write_csv(spectral_report_table(report), dir / "spectral_report.csv");
  nlohmann::json j = spectral_report_json(report);
  if (!note.empty()) j["note"] = note;
  write_json(dir / "spectral_report.json", j);
  return dir;
}

inline std::string module_group(const std::string& layer) {
  if (layer == "layer1") return "hidden";
  if (layer == "layer2") return "output";
  return "other";
}

// Aggregates completed run directories into one comparison table plus the
// per-layer active-rank quantile export.
inline fs::path cmd_report(const std::vector<std::string>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report: need at least one run directory");
  struct Row {
    std::string strategy, task, status;
    double fraction = 0.0, mean_rank = 0.0, loss = 0.0;
    bool has_rank = false;
  };
  std::vector<Row> rows;
  std::map<std::string, double> full_ft_reference;
  std::vector<std::pair<std::string, RunMetrics>> loaded;

  for (const std::string& dir : run_dirs) {
    const fs::path mpath = fs::path(dir) / "metrics.json";
    if (!fs::exists(mpath)) {
      rows.push_back({dir, "-", "missing_metrics", 0.0, 0.0, 0.0, false});
      continue;
    }
    const nlohmann::json j = read_json(mpath);
    const std::string kind = j.value("kind", "unknown");
    RunMetrics m = metrics_from_json(j);
    if (kind == "full-ft")
      for (const auto& [task, loss] : m.final_val_loss) full_ft_reference[task] = loss;
    loaded.emplace_back(kind, std::move(m));
  }

  CsvTable table;
  table.header = {"strategy", "task", "trainable_fraction", "mean_active_rank",
                  "final_val_loss", "success_proxy", "status"};
  for (const auto& [kind, m] : loaded) {
    for (const auto& [task, loss] : m.final_val_loss) {
      const bool has_rank = m.mean_active_rank_per_task.count(task) > 0;
      std::string proxy = "-";
      std::string status = "ok";
      if (full_ft_reference.count(task))
        proxy = loss <= 1.1 * full_ft_reference.at(task) ? "1" : "0";
      else
        status = "no_reference";
      table.rows.push_back({kind, task, csv_num(m.trainable_fraction),
                            has_rank ? csv_num(m.mean_active_rank_per_task.at(task)) : "-",
                            csv_num(loss), proxy, status});
    }
  }
  for (const Row& r : rows)
    table.rows.push_back({r.strategy, r.task, "-", "-", "-", "-", r.status});
  std::sort(table.rows.begin(), table.rows.end());

  CsvTable quantiles;
  quantiles.header = {"layer", "module_group", "min", "lq", "median", "uq", "max"};
  for (const auto& [kind, m] : loaded)
    for (const LayerRankStats& s : m.rank_stats)
      quantiles.rows.push_back({s.layer, module_group(s.layer), csv_num(s.min_k), csv_num(s.lq_k),
                                csv_num(s.median_k), csv_num(s.uq_k), csv_num(s.max_k)});

  const fs::path dir = out_dir.empty() ? out_root() / "report" : out_dir;
  fs::create_directories(dir);
  write_csv(table, dir / "report.csv");
  write_csv(quantiles, dir / "rank_quantiles.csv");
  return dir;
}

// ---------------------------------------------------------------------------
// Argument parsing and dispatch; returns a process exit code.

inline int run(const Options& opts) {
  try {
    if (opts.subcommand == "train" || opts.subcommand == "sweep" || opts.subcommand == "ablate") {
      CliRunConfig cfg = load_config_file(opts.config_path);
      if (opts.seed) cfg.train.seed = *opts.seed;
      fs::path dir;
      if (opts.subcommand == "train") dir = cmd_train(cfg, opts.out_dir);
      if (opts.subcommand == "sweep") dir = cmd_sweep(cfg, opts.out_dir, opts.jobs, opts.resume);
      if (opts.subcommand == "ablate") dir = cmd_ablate(cfg, opts.out_dir, opts.jobs);
      if (!opts.quiet) std::cout << dir.string() << "\n";
      return kExitOk;
    }
    if (opts.subcommand == "analyze") {
      std::vector<double> etas = opts.etas.empty() ? std::vector<double>{0.9, 0.99} : opts.etas;
      if (!opts.config_path.empty()) {
        const CliRunConfig cfg = load_config_file(opts.config_path);
        if (opts.etas.empty()) etas = cfg.etas;
      }
      const fs::path dir = cmd_analyze(opts.input, etas, opts.out_dir);
      if (!opts.quiet) std::cout << dir.string() << "\n";
      return kExitOk;
    }
    if (opts.subcommand == "report") {
      const fs::path dir = cmd_report(opts.run_dirs, opts.out_dir);
      if (!opts.quiet) std::cout << dir.string() << "\n";
      return kExitOk;
    }
    std::cerr << "error: unknown subcommand '" << opts.subcommand << "'\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }
}

}  // namespace lorasp::cli
