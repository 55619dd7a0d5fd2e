// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0
//
// lorasp: train adapters on the synthetic multi-task suite, sweep ranks,
// run ablations, analyze update spectra, and aggregate reports.

#include <CLI11.hpp>

#include "lorasp/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"input-conditioned low-rank adapters with energy-target rank selection"};
  app.require_subcommand(1);

  lorasp::cli::Options opts;
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  bool has_seed = false;

  const auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", config_path, "JSON config file");
    if (needs_config) c->required();
    sub->add_option("--out", out_dir, "output directory (default: $LORASP_OUT_ROOT or ./runs)");
    sub->add_option("--jobs", opts.jobs, "worker threads for independent runs")->check(CLI::PositiveNumber);
    sub->add_flag("--quiet", opts.quiet, "suppress the output-directory line");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t v) { seed = v; has_seed = true; }, "override train.seed");
  };

  auto* train_cmd = app.add_subcommand("train", "train one adapter configuration");
  add_common(train_cmd, true);

  auto* sweep_cmd = app.add_subcommand("sweep", "rank sweep over single-/multi-task regimes");
  add_common(sweep_cmd, true);
  sweep_cmd->add_flag("--resume", opts.resume, "skip sweep cells with complete metrics");

  auto* ablate_cmd = app.add_subcommand("ablate", "spectral-loss or eta-grid ablation");
  add_common(ablate_cmd, true);

  auto* analyze_cmd = app.add_subcommand("analyze", "per-layer rank-at-energy spectral report");
  analyze_cmd->add_option("input", opts.input, "checkpoint file or directory of .mat updates")
      ->required();
  analyze_cmd->add_option("--etas", opts.etas, "energy targets (default 0.9 0.99)");
  analyze_cmd->add_option("--config", config_path, "JSON config file (analyze.etas)");
  analyze_cmd->add_option("--out", out_dir, "output directory");
  analyze_cmd->add_flag("--quiet", opts.quiet, "suppress the output-directory line");

  auto* report_cmd = app.add_subcommand("report", "aggregate tables from completed run directories");
  report_cmd->add_option("run_dirs", opts.run_dirs, "run directories with metrics.json")->required();
  report_cmd->add_option("--out", out_dir, "output directory");
  report_cmd->add_flag("--quiet", opts.quiet, "suppress the output-directory line");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : lorasp::cli::kExitUsage;
  }

  opts.subcommand = app.get_subcommands().front()->get_name();
  opts.config_path = config_path;
  opts.out_dir = out_dir;
  if (has_seed) opts.seed = seed;
  return lorasp::cli::run(opts);
}
