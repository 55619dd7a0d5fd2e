// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lorasp/train.hpp"

namespace lorasp {

// Raised for malformed or out-of-schema configuration; maps to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Fully resolved run configuration. Every field has an explicit default and
// the resolved values are echoed into each run directory, so a config file
// never has silent defaults.
struct CliRunConfig {
  // suite
  std::uint64_t suite_seed = 1;
  std::vector<std::size_t> planted_ranks = {2, 8, 16, 24};
  SuiteConfig suite;

  TrainConfig train;

  // sweep
  std::vector<std::size_t> sweep_ranks = {1, 2, 4, 8, 16, 24, 32, 48};
  bool sweep_single = true;
  bool sweep_multi = true;

  // ablate
  AblationAxis ablate_axis = AblationAxis::EtaGrid;

  // analyze
  std::vector<double> etas = {0.9, 0.99};

  TaskSuite make_suite() const { return make_tasks(suite_seed, planted_ranks, suite); }
};

namespace detail {

class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: section '" + path_ + "' must be a JSON object");
  }

  template <typename T, typename Check>
  void read(const char* key, T& out, const char* type_name, Check&& check) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: field '" + path_ + "." + key + "' must be " + type_name);
    }
    check(out);
  }

  template <typename T>
  void read(const char* key, T& out, const char* type_name) {
    read(key, out, type_name, [](const T&) {});
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key))
        throw ConfigError("config: unknown key '" + key + "' in section '" + path_ + "'");
  }

  bool has(const char* key) const { return j_.contains(key); }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require_positive(const char* field, std::size_t v) {
  if (v == 0) throw ConfigError(std::string("config: '") + field + "' must be positive");
}

}  // namespace detail

inline CliRunConfig parse_config(const nlohmann::json& root) {
  if (!root.is_object()) throw ConfigError("config: top level must be a JSON object");
  CliRunConfig cfg;
  static const std::set<std::string> sections = {"suite", "train", "sweep", "ablate", "analyze"};
  for (const auto& [key, value] : root.items())
    if (!sections.count(key)) throw ConfigError("config: unknown top-level key '" + key + "'");

  if (root.contains("suite")) {
    detail::Section s(root.at("suite"), "suite");
    s.read("seed", cfg.suite_seed, "an unsigned integer");
    s.read("planted_ranks", cfg.planted_ranks, "an array of unsigned integers",
           [](const std::vector<std::size_t>& v) {
             if (v.empty()) throw ConfigError("config: 'suite.planted_ranks' must be nonempty");
           });
    s.read("train_samples", cfg.suite.train_samples, "an unsigned integer");
    s.read("val_samples", cfg.suite.val_samples, "an unsigned integer");
    s.read("d_in", cfg.suite.d_in, "an unsigned integer");
    s.read("hidden", cfg.suite.hidden, "an unsigned integer");
    s.read("d_out", cfg.suite.d_out, "an unsigned integer");
    s.read("delta_scale", cfg.suite.delta_scale, "a number", [](double v) {
      if (!(v >= 0.0)) throw ConfigError("config: 'suite.delta_scale' must be >= 0");
    });
    s.read("label_noise", cfg.suite.label_noise, "a number", [](double v) {
      if (!(v >= 0.0)) throw ConfigError("config: 'suite.label_noise' must be >= 0");
    });
    s.finish();
    detail::require_positive("suite.train_samples", cfg.suite.train_samples);
    detail::require_positive("suite.val_samples", cfg.suite.val_samples);
  }

  if (root.contains("train")) {
    detail::Section s(root.at("train"), "train");
    std::string kind = kind_name(cfg.train.kind);
    s.read("kind", kind, "a string", [](const std::string& v) {
      try {
        parse_kind(v);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: 'train.kind': ") + e.what());
      }
    });
    cfg.train.kind = parse_kind(kind);
    s.read("rank", cfg.train.rank, "an unsigned integer");
    s.read("experts", cfg.train.experts, "an unsigned integer");
    s.read("eta", cfg.train.eta, "a number", [](double v) {
      if (!(v > 0.0 && v <= 1.0)) throw ConfigError("config: 'train.eta' must be in (0,1]");
    });
    s.read("lr", cfg.train.lr, "a number", [](double v) {
      if (!(v > 0.0)) throw ConfigError("config: 'train.lr' must be positive");
    });
    s.read("steps", cfg.train.steps, "an unsigned integer");
    s.read("batch_size", cfg.train.batch_size, "an unsigned integer");
    s.read("seed", cfg.train.seed, "an unsigned integer");
    s.read("spec_weight", cfg.train.spec_weight, "a number", [](double v) {
      if (v < 0.0) throw ConfigError("config: 'train.spec_weight' must be >= 0");
    });
    s.read("router_weight", cfg.train.router_weight, "a number", [](double v) {
      if (v < 0.0) throw ConfigError("config: 'train.router_weight' must be >= 0");
    });
    s.read("hidden_dim", cfg.train.hidden_dim, "an unsigned integer");
    s.read("gate_hidden", cfg.train.gate_hidden, "an unsigned integer");
    s.read("metrics_interval", cfg.train.metrics_interval, "an unsigned integer");
    s.read("tasks", cfg.train.task_filter, "an array of unsigned integers");
    s.read("divergence_threshold", cfg.train.divergence_threshold, "a number");
    s.finish();
    detail::require_positive("train.steps", cfg.train.steps);
    detail::require_positive("train.batch_size", cfg.train.batch_size);
    detail::require_positive("train.metrics_interval", cfg.train.metrics_interval);
  }

  if (root.contains("sweep")) {
    detail::Section s(root.at("sweep"), "sweep");
    s.read("ranks", cfg.sweep_ranks, "an array of unsigned integers",
           [](const std::vector<std::size_t>& v) {
             if (v.empty()) throw ConfigError("config: 'sweep.ranks' must be nonempty");
             for (std::size_t r : v)
               if (r == 0) throw ConfigError("config: 'sweep.ranks' entries must be positive");
           });
    std::vector<std::string> regimes = {"single", "multi"};
    s.read("regimes", regimes, "an array of strings", [](const std::vector<std::string>& v) {
      if (v.empty()) throw ConfigError("config: 'sweep.regimes' must be nonempty");
      for (const std::string& r : v)
        if (r != "single" && r != "multi")
          throw ConfigError("config: 'sweep.regimes' entries must be 'single' or 'multi'");
    });
    cfg.sweep_single = std::find(regimes.begin(), regimes.end(), "single") != regimes.end();
    cfg.sweep_multi = std::find(regimes.begin(), regimes.end(), "multi") != regimes.end();
    s.finish();
  }

  if (root.contains("ablate")) {
    detail::Section s(root.at("ablate"), "ablate");
    std::string axis = "eta_grid";
    s.read("axis", axis, "a string", [](const std::string& v) {
      if (v != "eta_grid" && v != "spectral_loss")
        throw ConfigError("config: 'ablate.axis' must be 'eta_grid' or 'spectral_loss'");
    });
    cfg.ablate_axis = axis == "eta_grid" ? AblationAxis::EtaGrid : AblationAxis::SpectralLoss;
    s.finish();
  }

  if (root.contains("analyze")) {
    detail::Section s(root.at("analyze"), "analyze");
    s.read("etas", cfg.etas, "an array of numbers", [](const std::vector<double>& v) {
      if (v.empty()) throw ConfigError("config: 'analyze.etas' must be nonempty");
      for (double eta : v)
        if (!(eta > 0.0 && eta <= 1.0))
          throw ConfigError("config: 'analyze.etas' entries must be in (0,1]");
    });
    s.finish();
  }

  return cfg;
}

inline nlohmann::json echo_config(const CliRunConfig& cfg) {
  nlohmann::json j;
  j["suite"] = {{"seed", cfg.suite_seed},
                {"planted_ranks", cfg.planted_ranks},
                {"train_samples", cfg.suite.train_samples},
                {"val_samples", cfg.suite.val_samples},
                {"d_in", cfg.suite.d_in},
                {"hidden", cfg.suite.hidden},
                {"d_out", cfg.suite.d_out},
                {"delta_scale", cfg.suite.delta_scale},
                {"label_noise", cfg.suite.label_noise}};
  j["train"] = {{"kind", kind_name(cfg.train.kind)},
                {"rank", cfg.train.rank},
                {"experts", cfg.train.experts},
                {"eta", cfg.train.eta},
                {"lr", cfg.train.lr},
                {"steps", cfg.train.steps},
                {"batch_size", cfg.train.batch_size},
                {"seed", cfg.train.seed},
                {"spec_weight", cfg.train.spec_weight},
                {"router_weight", cfg.train.router_weight},
                {"hidden_dim", cfg.train.hidden_dim},
                {"gate_hidden", cfg.train.gate_hidden},
                {"metrics_interval", cfg.train.metrics_interval},
                {"tasks", cfg.train.task_filter},
                {"divergence_threshold", cfg.train.divergence_threshold}};
  std::vector<std::string> regimes;
  if (cfg.sweep_single) regimes.push_back("single");
  if (cfg.sweep_multi) regimes.push_back("multi");
  j["sweep"] = {{"ranks", cfg.sweep_ranks}, {"regimes", regimes}};
  j["ablate"] = {{"axis", cfg.ablate_axis == AblationAxis::EtaGrid ? "eta_grid" : "spectral_loss"}};
  j["analyze"] = {{"etas", cfg.etas}};
  return j;
}

// Stable fingerprint of the resolved config; names run directories.
inline std::string config_fingerprint(const nlohmann::json& echoed) {
  const std::string dump = echoed.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : dump) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline CliRunConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: malformed JSON in " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

}  // namespace lorasp
