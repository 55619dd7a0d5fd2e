// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>

#include <json.hpp>

#include "lorasp/baselines.hpp"
#include "lorasp/tasks.hpp"

namespace lorasp {

enum class AdapterKind { LoraSp, Lora, MoeHard, MoeSoft, FullFt };

inline std::string kind_name(AdapterKind kind) {
  switch (kind) {
    case AdapterKind::LoraSp: return "lorasp";
    case AdapterKind::Lora: return "lora";
    case AdapterKind::MoeHard: return "moe-hard";
    case AdapterKind::MoeSoft: return "moe-soft";
    case AdapterKind::FullFt: return "full-ft";
  }
  return "unknown";
}

inline AdapterKind parse_kind(const std::string& name) {
  if (name == "lorasp") return AdapterKind::LoraSp;
  if (name == "lora") return AdapterKind::Lora;
  if (name == "moe-hard") return AdapterKind::MoeHard;
  if (name == "moe-soft") return AdapterKind::MoeSoft;
  if (name == "full-ft") return AdapterKind::FullFt;
  throw std::invalid_argument("unknown adapter kind '" + name +
                              "' (expected lorasp|lora|moe-hard|moe-soft|full-ft)");
}

struct TrainConfig {
  AdapterKind kind = AdapterKind::LoraSp;
  std::size_t rank = 48;  // r_init for lorasp, rank for lora, per-expert rank for moe
  std::size_t experts = 4;
  double eta = 0.9;
  double lr = 1e-3;
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double spec_weight = 1e-2;
  double router_weight = 1e-3;
  std::size_t hidden_dim = 0;  // router hidden; 0 -> rank/4
  std::size_t gate_hidden = 16;
  std::size_t metrics_interval = 100;
  std::vector<std::size_t> task_filter;  // empty = all tasks
  double divergence_threshold = 1e6;

  void validate(const TaskSuite& suite) const {
    if (steps == 0 || batch_size == 0) throw std::invalid_argument("train config: steps and batch_size must be positive");
    if (metrics_interval == 0) throw std::invalid_argument("train config: metrics_interval must be positive");
    if (kind != AdapterKind::FullFt && rank < 1) throw std::invalid_argument("train config: rank must be >= 1");
    if ((kind == AdapterKind::MoeHard || kind == AdapterKind::MoeSoft) && experts < 1)
      throw std::invalid_argument("train config: experts must be >= 1");
    if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("train config: eta must be in (0,1]");
    if (spec_weight < 0.0 || router_weight < 0.0)
      throw std::invalid_argument("train config: loss weights must be nonnegative");
    for (std::size_t t : task_filter)
      if (t >= suite.tasks.size())
        throw std::invalid_argument("train config: task index " + std::to_string(t) + " out of range");
  }

  AdapterConfig adapter_config() const {
    AdapterConfig c;
    c.r_init = rank;
    c.eta = eta;
    c.spec_weight = spec_weight;
    c.router_weight = router_weight;
    c.hidden_dim = hidden_dim;
    return c;
  }
};

struct LossPoint {
  std::size_t step = 0;
  std::string task;
  std::string split;  // "train" | "val"
  double value = 0.0;

  bool operator==(const LossPoint&) const = default;
};

struct SelectionLogRow {
  std::size_t step = 0;
  std::string task;
  std::string layer;
  std::size_t input_id = 0;
  std::size_t k = 0;
  double energy_k = 0.0;
  double spec_loss = 0.0;
};

struct FinalSelection {
  std::string task;
  std::string layer;
  SelectionResult sel;
};

struct LayerRankStats {
  std::string layer;
  double mean_k = 0.0;
  double min_k = 0.0, lq_k = 0.0, median_k = 0.0, uq_k = 0.0, max_k = 0.0;
  std::map<std::string, double> mean_k_per_task;
};

struct RunMetrics {
  std::vector<LossPoint> curve;
  std::map<std::string, double> final_val_loss;
  std::map<std::string, double> final_train_loss;
  std::vector<LayerRankStats> rank_stats;               // lorasp runs only
  double mean_active_rank = 0.0;                        // lorasp runs only
  std::map<std::string, double> mean_active_rank_per_task;
  std::size_t trainable_params = 0;
  std::size_t total_params = 0;
  double trainable_fraction = 0.0;
  double wall_seconds = 0.0;
  std::size_t steps = 0;
  std::vector<SelectionLogRow> selection_log;
  std::vector<FinalSelection> final_selections;  // final val pass, lorasp only
};

// ---------------------------------------------------------------------------
// Model state: one adapter per adapted base layer, stored as typed structs;
// the optimizer sees them through a flat name -> Matrix* view whose names
// match the tape parameter names.

struct LayerModel {
  std::optional<std::pair<VectorBank, RouterParams>> lorasp;
  std::optional<LoraAdapter> lora;
  std::optional<MoeAdapter> moe;
  std::optional<Matrix> full_weight;
};

struct Model {
  std::map<std::string, LayerModel> layers;
  std::size_t trainable_count = 0;
};

inline Model init_model(const TaskSuite& suite, const TrainConfig& config) {
  Model model;
  for (const std::string& layer : suite.base.layer_names()) {
    const Matrix& w = suite.base.layer_weight(layer);
    const std::size_t d_out = w.rows(), d_in = w.cols();
    LayerModel lm;
    switch (config.kind) {
      case AdapterKind::LoraSp: {
        lm.lorasp = init_adapter(d_in, d_out, config.adapter_config(), config.seed, layer);
        model.trainable_count += adapter_param_count(d_in, d_out, config.adapter_config());
        break;
      }
      case AdapterKind::Lora: {
        lm.lora = init_lora(d_in, d_out, config.rank, config.seed, layer);
        model.trainable_count += lora_param_count(config.rank, d_in, d_out);
        break;
      }
      case AdapterKind::MoeHard:
      case AdapterKind::MoeSoft: {
        lm.moe = init_moe(d_in, d_out, config.experts, config.rank,
                          config.kind == AdapterKind::MoeHard ? MoeMode::Hard : MoeMode::Soft,
                          config.seed, layer, config.gate_hidden);
        model.trainable_count +=
            moe_param_count(config.experts, config.rank, d_in, d_out, config.gate_hidden);
        break;
      }
      case AdapterKind::FullFt: {
        lm.full_weight = w;
        model.trainable_count += w.size();
        break;
      }
    }
    model.layers.emplace(layer, std::move(lm));
  }
  return model;
}

inline std::map<std::string, Matrix*> parameter_views(Model& model) {
  std::map<std::string, Matrix*> views;
  for (auto& [layer, lm] : model.layers) {
    if (lm.lorasp) {
      auto& [bank, router] = *lm.lorasp;
      views[layer + ".u"] = &bank.u;
      views[layer + ".v"] = &bank.v;
      views[layer + ".router.w1"] = &router.w1;
      views[layer + ".router.b1"] = &router.b1;
      views[layer + ".router.w2"] = &router.w2;
      views[layer + ".router.b2"] = &router.b2;
    }
    if (lm.lora) {
      views[layer + ".a"] = &lm.lora->a;
      views[layer + ".b"] = &lm.lora->b;
    }
    if (lm.moe) {
      for (std::size_t e = 0; e < lm.moe->experts.size(); ++e) {
        views[layer + ".expert" + std::to_string(e) + ".a"] = &lm.moe->experts[e].a;
        views[layer + ".expert" + std::to_string(e) + ".b"] = &lm.moe->experts[e].b;
      }
      views[layer + ".gate.w1"] = &lm.moe->gate.w1;
      views[layer + ".gate.b1"] = &lm.moe->gate.b1;
      views[layer + ".gate.w2"] = &lm.moe->gate.w2;
      views[layer + ".gate.b2"] = &lm.moe->gate.b2;
    }
    if (lm.full_weight) views[layer + ".weight"] = &*lm.full_weight;
  }
  return views;
}

class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::map<std::string, Matrix*>& params, const GradMap& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, value] : params) {
      const Matrix& g = grads.at(name);
      auto& [m, v] = state_[name];
      if (m.empty()) {
        m = Matrix(g.rows(), g.cols());
        v = Matrix(g.rows(), g.cols());
      }
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double gi = g.data()[i];
        m.data()[i] = beta1_ * m.data()[i] + (1.0 - beta1_) * gi;
        v.data()[i] = beta2_ * v.data()[i] + (1.0 - beta2_) * gi * gi;
        value->data()[i] -= lr_ * (m.data()[i] / bc1) / (std::sqrt(v.data()[i] / bc2) + eps_);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, std::pair<Matrix, Matrix>> state_;
};

// ---------------------------------------------------------------------------
// Batch graph.

struct GraphOut {
  NodeId y = 0;
  NodeId task_loss = 0;
  NodeId total_loss = 0;
  std::map<std::string, std::vector<SelectionResult>> selections;
};

inline GraphOut build_graph(Tape& tape, const TaskSuite& suite, const TrainConfig& config,
                            const Model& model, const Matrix& batch_x, const Matrix& batch_y) {
  GraphOut out;
  NodeId cur = tape.constant(batch_x);
  const NodeId target = tape.constant(batch_y);
  std::vector<NodeId> spec_terms, reg_terms;

  const std::vector<std::string> layers = suite.base.layer_names();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const std::string& layer = layers[li];
    const LayerModel& lm = model.layers.at(layer);
    NodeId layer_out;
    if (lm.full_weight) {
      layer_out = tape.matmul(tape.parameter(layer + ".weight", *lm.full_weight), cur);
    } else {
      const NodeId base_out = tape.matmul(tape.constant(suite.base.layer_weight(layer)), cur);
      if (lm.lorasp) {
        const auto& [bank, router] = *lm.lorasp;
        const AdapterParamIds ids = add_adapter_parameters(tape, layer, bank, router);
        const RouteIds routed = route_graph(tape, ids, cur);
        std::vector<SelectionResult> sels = select_columns(tape.value(routed.scores), config.eta);
        const NodeId delta = adapter_delta_graph(tape, ids, routed.scores, cur, sels);
        layer_out = tape.add(base_out, delta);
        spec_terms.push_back(spectral_loss_graph(tape, routed.scores, sels));
        reg_terms.push_back(router_reg_graph(tape, routed.scores, routed.logits, sels));
        out.selections.emplace(layer, std::move(sels));
      } else if (lm.lora) {
        const LoraParamIds ids = add_lora_parameters(tape, layer, *lm.lora);
        layer_out = tape.add(base_out, lora_delta_graph(tape, ids, cur, lm.lora->scaling));
      } else {
        const MoeParamIds ids = add_moe_parameters(tape, layer, *lm.moe);
        std::vector<double> scalings;
        for (const auto& e : lm.moe->experts) scalings.push_back(e.scaling);
        const MoeGraph g = moe_delta_graph(tape, ids, cur, lm.moe->mode, scalings);
        layer_out = tape.add(base_out, g.delta);
        reg_terms.push_back(moe_reg_graph(tape, g, lm.moe->experts.size()));
      }
    }
    cur = (li + 1 == layers.size()) ? layer_out : tape.tanh(layer_out);
  }

  out.y = cur;
  const NodeId diff = tape.sub(cur, target);
  out.task_loss = tape.scale(tape.sum_all(tape.square(diff)), 1.0 / static_cast<double>(batch_y.size()));
  NodeId total = out.task_loss;
  const auto mean_terms = [&](const std::vector<NodeId>& terms) {
    NodeId acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = tape.add(acc, terms[i]);
    return tape.scale(acc, 1.0 / static_cast<double>(terms.size()));
  };
  if (!spec_terms.empty() && config.spec_weight > 0.0)
    total = tape.add(total, tape.scale(mean_terms(spec_terms), config.spec_weight));
  if (!reg_terms.empty() && config.router_weight > 0.0)
    total = tape.add(total, tape.scale(mean_terms(reg_terms), config.router_weight));
  out.total_loss = total;
  return out;
}

// ---------------------------------------------------------------------------
// Training loop.

namespace detail {

inline Matrix gather_columns(const Matrix& m, const std::vector<std::size_t>& cols) {
  Matrix out(m.rows(), cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t i = 0; i < m.rows(); ++i) out(i, j) = m(i, cols[j]);
  return out;
}

inline double quantile(std::vector<double> sorted, double p) {
  if (sorted.empty()) return 0.0;
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace detail

inline RunMetrics train(const TaskSuite& suite, const TrainConfig& config,
                        Model* trained_out = nullptr) {
  config.validate(suite);
  const auto start = std::chrono::steady_clock::now();

  std::vector<std::size_t> active = config.task_filter;
  if (active.empty())
    for (std::size_t t = 0; t < suite.tasks.size(); ++t) active.push_back(t);

  Model model = init_model(suite, config);
  auto views = parameter_views(model);
  AdamOptimizer adam(config.lr);
  Rng batch_rng = Rng::stream(config.seed, "batch");

  RunMetrics metrics;
  metrics.steps = config.steps;
  metrics.trainable_params = model.trainable_count;
  metrics.total_params = config.kind == AdapterKind::FullFt
                             ? suite.base.param_count()
                             : suite.base.param_count() + model.trainable_count;
  metrics.trainable_fraction =
      static_cast<double>(metrics.trainable_params) / static_cast<double>(metrics.total_params);

  const auto eval_task = [&](std::size_t task_index, std::size_t step, bool log_selections,
                             bool keep_final) {
    const Task& task = suite.task(task_index);
    Tape tape;
    const GraphOut g = build_graph(tape, suite, config, model, task.val_x, task.val_y);
    const double loss = tape.scalar_value(g.task_loss);
    if (!keep_final) metrics.curve.push_back({step, task.name, "val", loss});
    if (config.kind == AdapterKind::LoraSp && (log_selections || keep_final)) {
      for (const auto& [layer, sels] : g.selections) {
        for (std::size_t i = 0; i < sels.size(); ++i) {
          if (log_selections)
            metrics.selection_log.push_back(
                {step, task.name, layer, i, sels[i].k, sels[i].energy_k, spectral_loss(sels[i])});
          if (keep_final) metrics.final_selections.push_back({task.name, layer, sels[i]});
        }
      }
    }
    return loss;
  };

  for (std::size_t step = 1; step <= config.steps; ++step) {
    const std::size_t task_index = active[(step - 1) % active.size()];
    const Task& task = suite.task(task_index);
    std::vector<std::size_t> batch(config.batch_size);
    for (auto& idx : batch) idx = batch_rng.index(task.train_x.cols());
    const Matrix bx = detail::gather_columns(task.train_x, batch);
    const Matrix by = detail::gather_columns(task.train_y, batch);

    try {
      Tape tape;
      const GraphOut g = build_graph(tape, suite, config, model, bx, by);
      const double loss = tape.scalar_value(g.total_loss);
      if (!std::isfinite(loss) || loss > config.divergence_threshold)
        throw DivergenceError("training diverged at step " + std::to_string(step) + " on " +
                              task.name + ": loss=" + std::to_string(loss));
      const GradMap grads = tape.backward(g.total_loss);
      adam.step(views, grads);

      if (step % config.metrics_interval == 0 || step == config.steps) {
        metrics.curve.push_back({step, task.name, "train", tape.scalar_value(g.task_loss)});
        for (std::size_t t : active) eval_task(t, step, /*log_selections=*/true, /*keep_final=*/false);
      }
    } catch (const DivergenceError&) {
      throw;
    } catch (const NumericalError& e) {
      throw DivergenceError("training diverged at step " + std::to_string(step) + " on " + task.name +
                            ": " + e.what());
    }
  }

  // Final evaluation: losses on both splits, selections kept for metrics.
  for (std::size_t t : active) {
    const Task& task = suite.task(t);
    metrics.final_val_loss[task.name] = eval_task(t, config.steps, false, true);
    Tape tape;
    const GraphOut g = build_graph(tape, suite, config, model, task.train_x, task.train_y);
    metrics.final_train_loss[task.name] = tape.scalar_value(g.task_loss);
  }

  if (config.kind == AdapterKind::LoraSp) {
    std::map<std::string, std::vector<double>> ks_per_layer;
    std::map<std::string, std::map<std::string, std::pair<double, std::size_t>>> task_sums;
    for (const FinalSelection& fs : metrics.final_selections) {
      ks_per_layer[fs.layer].push_back(static_cast<double>(fs.sel.k));
      auto& [sum, count] = task_sums[fs.layer][fs.task];
      sum += static_cast<double>(fs.sel.k);
      count += 1;
    }
    double overall = 0.0;
    for (auto& [layer, ks] : ks_per_layer) {
      std::sort(ks.begin(), ks.end());
      LayerRankStats stats;
      stats.layer = layer;
      stats.min_k = ks.front();
      stats.max_k = ks.back();
      stats.lq_k = detail::quantile(ks, 0.25);
      stats.median_k = detail::quantile(ks, 0.5);
      stats.uq_k = detail::quantile(ks, 0.75);
      double mean = 0.0;
      for (double k : ks) mean += k;
      stats.mean_k = mean / static_cast<double>(ks.size());
      for (const auto& [task_name, sc] : task_sums[layer])
        stats.mean_k_per_task[task_name] = sc.first / static_cast<double>(sc.second);
      overall += stats.mean_k;
      metrics.rank_stats.push_back(std::move(stats));
    }
    metrics.mean_active_rank = overall / static_cast<double>(metrics.rank_stats.size());
    for (std::size_t t : active) {
      const std::string& name = suite.task(t).name;
      double sum = 0.0;
      for (const LayerRankStats& stats : metrics.rank_stats) sum += stats.mean_k_per_task.at(name);
      metrics.mean_active_rank_per_task[name] =
          sum / static_cast<double>(metrics.rank_stats.size());
    }
  }

  metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (trained_out) *trained_out = std::move(model);
  return metrics;
}

// ---------------------------------------------------------------------------
// Sweeps, ablations, and the intrinsic-dimension estimator.

struct RankLossPoint {
  std::size_t rank = 0;
  double loss = 0.0;
};

// Smallest swept rank whose loss reaches target + epsilon; nullopt when no
// swept rank is feasible.
inline std::optional<std::size_t> intrinsic_dimension(std::vector<RankLossPoint> curve, double target,
                                                      double epsilon) {
  if (curve.empty()) throw std::invalid_argument("intrinsic_dimension: empty curve");
  std::sort(curve.begin(), curve.end(),
            [](const RankLossPoint& a, const RankLossPoint& b) { return a.rank < b.rank; });
  for (const RankLossPoint& p : curve)
    if (p.loss <= target + epsilon) return p.rank;
  return std::nullopt;
}

template <typename F>
inline void parallel_for(std::size_t count, std::size_t jobs, F&& body) {
  if (count == 0) return;
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

struct SweepCell {
  std::string regime;  // "single" | "multi"
  std::string task;
  std::size_t rank = 0;
  double val_loss = 0.0;
  double full_ft_val_loss = 0.0;
  bool success = false;  // val_loss <= 1.1 * full-ft reference
};

struct RankSweepResult {
  std::vector<SweepCell> cells;
  std::map<std::string, double> epsilon;  // per task, 0.1 * frozen-base loss
  std::map<std::string, std::optional<std::size_t>> intrinsic_dim;  // single-task regime
};

struct SweepJob {
  TrainConfig config;
  std::string regime;
  std::optional<std::size_t> rank;  // nullopt = full-ft reference run
};

inline std::vector<SweepJob> sweep_jobs(const TaskSuite& suite, const std::vector<std::size_t>& ranks,
                                        const TrainConfig& base_config, bool single_regime,
                                        bool multi_regime) {
  if (base_config.kind != AdapterKind::Lora)
    throw std::invalid_argument("rank_sweep: config kind must be lora");
  if (ranks.empty()) throw std::invalid_argument("rank_sweep: empty rank list");
  std::vector<SweepJob> jobs;
  const auto enqueue = [&](const std::string& regime, std::vector<std::size_t> filter) {
    TrainConfig ft = base_config;
    ft.kind = AdapterKind::FullFt;
    ft.task_filter = filter;
    jobs.push_back({ft, regime, std::nullopt});
    for (std::size_t rank : ranks) {
      TrainConfig c = base_config;
      c.rank = rank;
      c.task_filter = filter;
      jobs.push_back({c, regime, rank});
    }
  };
  if (single_regime)
    for (std::size_t t = 0; t < suite.tasks.size(); ++t) enqueue("single", {t});
  if (multi_regime) enqueue("multi", {});
  return jobs;
}

inline RankSweepResult assemble_sweep(const TaskSuite& suite, const std::vector<SweepJob>& jobs,
                                      const std::vector<RunMetrics>& results, bool single_regime) {
  RankSweepResult out;
  std::map<std::pair<std::string, std::string>, double> reference;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (jobs[i].rank) continue;
    for (const auto& [task, loss] : results[i].final_val_loss)
      reference[{jobs[i].regime, task}] = loss;
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!jobs[i].rank) continue;
    for (const auto& [task, loss] : results[i].final_val_loss) {
      SweepCell cell;
      cell.regime = jobs[i].regime;
      cell.task = task;
      cell.rank = *jobs[i].rank;
      cell.val_loss = loss;
      cell.full_ft_val_loss = reference.at({cell.regime, task});
      cell.success = loss <= 1.1 * cell.full_ft_val_loss;
      out.cells.push_back(std::move(cell));
    }
  }
  std::sort(out.cells.begin(), out.cells.end(), [](const SweepCell& a, const SweepCell& b) {
    return std::tie(a.regime, a.task, a.rank) < std::tie(b.regime, b.task, b.rank);
  });

  if (single_regime) {
    for (std::size_t t = 0; t < suite.tasks.size(); ++t) {
      const std::string& name = suite.task(t).name;
      out.epsilon[name] = 0.1 * base_val_loss(suite, t);
      std::vector<RankLossPoint> curve;
      for (const SweepCell& cell : out.cells)
        if (cell.regime == "single" && cell.task == name) curve.push_back({cell.rank, cell.val_loss});
      out.intrinsic_dim[name] =
          intrinsic_dimension(curve, reference.at({"single", name}), out.epsilon[name]);
    }
  }
  return out;
}

// Fixed-rank LoRA sweep with shared seeds across ranks; full fine-tuning
// runs provide the per-regime reference losses.
inline RankSweepResult rank_sweep(const TaskSuite& suite, const std::vector<std::size_t>& ranks,
                                  const TrainConfig& base_config, bool single_regime = true,
                                  bool multi_regime = true, std::size_t jobs = 1) {
  const std::vector<SweepJob> jobs_list =
      sweep_jobs(suite, ranks, base_config, single_regime, multi_regime);
  std::vector<RunMetrics> results(jobs_list.size());
  parallel_for(jobs_list.size(), jobs,
               [&](std::size_t i) { results[i] = train(suite, jobs_list[i].config); });
  return assemble_sweep(suite, jobs_list, results, single_regime);
}

enum class AblationAxis { SpectralLoss, EtaGrid };

struct AblationCell {
  std::string label;
  double eta = 0.0;
  bool with_spectral = true;
  std::map<std::string, double> final_val_loss;
  double mean_active_rank = 0.0;
  std::map<std::string, double> mean_active_rank_per_task;
};

struct AblationResult {
  AblationAxis axis;
  std::vector<AblationCell> cells;
};

inline const std::vector<double>& default_eta_grid() {
  static const std::vector<double> grid = {0.5, 0.7, 0.8, 0.9, 0.99};
  return grid;
}

inline AblationResult ablate(const TaskSuite& suite, const TrainConfig& config, AblationAxis axis,
                             std::size_t jobs = 1) {
  if (config.kind != AdapterKind::LoraSp)
    throw std::invalid_argument("ablate: config kind must be lorasp");
  std::vector<std::pair<std::string, TrainConfig>> cells;
  if (axis == AblationAxis::SpectralLoss) {
    TrainConfig with = config;
    TrainConfig without = config;
    without.spec_weight = 0.0;
    cells.emplace_back("with_spectral", with);
    cells.emplace_back("without_spectral", without);
  } else {
    for (double eta : default_eta_grid()) {
      TrainConfig c = config;
      c.eta = eta;
      cells.emplace_back("eta=" + csv_num(eta), c);
    }
  }
  std::vector<RunMetrics> results(cells.size());
  parallel_for(cells.size(), jobs, [&](std::size_t i) { results[i] = train(suite, cells[i].second); });

  AblationResult out;
  out.axis = axis;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    AblationCell cell;
    cell.label = cells[i].first;
    cell.eta = cells[i].second.eta;
    cell.with_spectral = cells[i].second.spec_weight > 0.0;
    cell.final_val_loss = results[i].final_val_loss;
    cell.mean_active_rank = results[i].mean_active_rank;
    cell.mean_active_rank_per_task = results[i].mean_active_rank_per_task;
    out.cells.push_back(std::move(cell));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON views used by the CLI and the report tool.

inline nlohmann::json run_metrics_json(const RunMetrics& m) {
  nlohmann::json j;
  j["steps"] = m.steps;
  j["trainable_params"] = m.trainable_params;
  j["total_params"] = m.total_params;
  j["trainable_fraction"] = m.trainable_fraction;
  j["wall_seconds"] = m.wall_seconds;
  j["final_val_loss"] = m.final_val_loss;
  j["final_train_loss"] = m.final_train_loss;
  if (!m.rank_stats.empty()) {
    j["mean_active_rank"] = m.mean_active_rank;
    j["mean_active_rank_per_task"] = m.mean_active_rank_per_task;
    for (const LayerRankStats& s : m.rank_stats) {
      j["rank_stats"].push_back({{"layer", s.layer},
                                 {"mean_k", s.mean_k},
                                 {"min", s.min_k},
                                 {"lq", s.lq_k},
                                 {"median", s.median_k},
                                 {"uq", s.uq_k},
                                 {"max", s.max_k},
                                 {"mean_k_per_task", s.mean_k_per_task}});
    }
  }
  for (const LossPoint& p : m.curve)
    j["curve"].push_back({{"step", p.step}, {"task", p.task}, {"split", p.split}, {"value", p.value}});
  return j;
}

}  // namespace lorasp
