// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "lorasp/adapter.hpp"

namespace lorasp {

// Fixed-rank adapter: y = w0 x + scaling * b (a x). b starts at zero so the
// update is a no-op at initialization.
struct LoraAdapter {
  Matrix a;  // rank x d_in
  Matrix b;  // d_out x rank
  std::size_t rank = 0;
  double scaling = 1.0;
};

inline LoraAdapter init_lora(std::size_t d_in, std::size_t d_out, std::size_t rank,
                             std::uint64_t seed, const std::string& stream_prefix = "lora") {
  if (rank < 1) throw std::invalid_argument("init_lora: rank must be >= 1");
  LoraAdapter adapter;
  adapter.rank = rank;
  adapter.a =
      Rng::stream(seed, stream_prefix + ".a").gaussian_matrix(rank, d_in, 1.0 / std::sqrt(double(d_in)));
  adapter.b = Matrix(d_out, rank);
  return adapter;
}

inline std::size_t lora_param_count(std::size_t rank, std::size_t d_in, std::size_t d_out) {
  return rank * (d_in + d_out);
}

inline Matrix lora_forward(const Matrix& x, const Matrix& w0, const LoraAdapter& adapter) {
  if (x.rows() != adapter.a.cols())
    throw std::invalid_argument("lora_forward: input " + shape_str(x) + " vs a " + shape_str(adapter.a));
  return add(matmul(w0, x), scale(matmul(adapter.b, matmul(adapter.a, x)), adapter.scaling));
}

enum class MoeMode { Hard, Soft };

// A bank of LoRA experts combined by a two-layer gate: hard routing applies
// the argmax expert (lowest index wins ties); soft routing mixes experts by
// softmax weights.
struct MoeAdapter {
  std::vector<LoraAdapter> experts;
  RouterParams gate;  // gate.w2 has one output row per expert
  MoeMode mode = MoeMode::Hard;
};

inline MoeAdapter init_moe(std::size_t d_in, std::size_t d_out, std::size_t expert_count,
                           std::size_t rank, MoeMode mode, std::uint64_t seed,
                           const std::string& stream_prefix = "moe", std::size_t gate_hidden = 16) {
  if (expert_count < 1) throw std::invalid_argument("init_moe: need at least one expert");
  MoeAdapter moe;
  moe.mode = mode;
  for (std::size_t e = 0; e < expert_count; ++e)
    moe.experts.push_back(init_lora(d_in, d_out, rank, seed, stream_prefix + ".expert" + std::to_string(e)));
  moe.gate.hidden_dim = gate_hidden;
  moe.gate.w1 = Rng::stream(seed, stream_prefix + ".gate.w1")
                    .gaussian_matrix(gate_hidden, d_in, 1.0 / std::sqrt(double(d_in)));
  moe.gate.b1 = Matrix(gate_hidden, 1);
  moe.gate.w2 = Rng::stream(seed, stream_prefix + ".gate.w2")
                    .gaussian_matrix(expert_count, gate_hidden, 1.0 / std::sqrt(double(gate_hidden)));
  moe.gate.b2 = Matrix(expert_count, 1);
  return moe;
}

inline std::size_t moe_param_count(std::size_t expert_count, std::size_t rank, std::size_t d_in,
                                   std::size_t d_out, std::size_t gate_hidden = 16) {
  return expert_count * lora_param_count(rank, d_in, d_out) + gate_hidden * d_in + gate_hidden +
         expert_count * gate_hidden + expert_count;
}

inline Matrix gate_logits(const Matrix& x, const RouterParams& gate) {
  const Matrix h1 = relu(add_col_broadcast(matmul(gate.w1, x), gate.b1));
  return add_col_broadcast(matmul(gate.w2, h1), gate.b2);
}

inline std::size_t argmax_index(const Matrix& column) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < column.rows(); ++i)
    if (column(i, 0) > column(best, 0)) best = i;
  return best;
}

inline std::vector<double> softmax_column(const Matrix& column) {
  double mx = column(0, 0);
  for (std::size_t i = 1; i < column.rows(); ++i) mx = std::max(mx, column(i, 0));
  std::vector<double> g(column.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = std::exp(column(i, 0) - mx);
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

inline Matrix moe_forward(const Matrix& x, const Matrix& w0, const MoeAdapter& moe) {
  if (moe.experts.empty()) throw std::invalid_argument("moe_forward: no experts");
  const Matrix logits = gate_logits(x, moe.gate);
  Matrix y = matmul(w0, x);
  if (moe.mode == MoeMode::Hard) {
    const LoraAdapter& expert = moe.experts[argmax_index(logits)];
    return add(y, scale(matmul(expert.b, matmul(expert.a, x)), expert.scaling));
  }
  const std::vector<double> weights = softmax_column(logits);
  for (std::size_t e = 0; e < moe.experts.size(); ++e) {
    const LoraAdapter& expert = moe.experts[e];
    y = add(y, scale(matmul(expert.b, matmul(expert.a, x)), weights[e] * expert.scaling));
  }
  return y;
}

// ---------------------------------------------------------------------------
// Tape graph builders.

struct LoraParamIds {
  NodeId a, b;
};

inline LoraParamIds add_lora_parameters(Tape& tape, const std::string& prefix, const LoraAdapter& adapter) {
  return LoraParamIds{tape.parameter(prefix + ".a", adapter.a), tape.parameter(prefix + ".b", adapter.b)};
}

inline NodeId lora_delta_graph(Tape& tape, const LoraParamIds& ids, NodeId x, double scaling) {
  const NodeId bax = tape.matmul(ids.b, tape.matmul(ids.a, x));
  return scaling == 1.0 ? bax : tape.scale(bax, scaling);
}

struct MoeParamIds {
  std::vector<LoraParamIds> experts;
  NodeId gate_w1, gate_b1, gate_w2, gate_b2;
};

inline MoeParamIds add_moe_parameters(Tape& tape, const std::string& prefix, const MoeAdapter& moe) {
  MoeParamIds ids;
  for (std::size_t e = 0; e < moe.experts.size(); ++e)
    ids.experts.push_back(add_lora_parameters(tape, prefix + ".expert" + std::to_string(e), moe.experts[e]));
  ids.gate_w1 = tape.parameter(prefix + ".gate.w1", moe.gate.w1);
  ids.gate_b1 = tape.parameter(prefix + ".gate.b1", moe.gate.b1);
  ids.gate_w2 = tape.parameter(prefix + ".gate.w2", moe.gate.w2);
  ids.gate_b2 = tape.parameter(prefix + ".gate.b2", moe.gate.b2);
  return ids;
}

inline NodeId moe_gate_logits_graph(Tape& tape, const MoeParamIds& ids, NodeId x) {
  const NodeId h1 = tape.relu(tape.add_col(tape.matmul(ids.gate_w1, x), ids.gate_b1));
  return tape.add_col(tape.matmul(ids.gate_w2, h1), ids.gate_b2);
}

struct MoeGraph {
  NodeId delta;
  NodeId logits;
  std::vector<std::size_t> hard_assignment;  // per column; empty in soft mode
};

// Hard mode masks columns by the argmax expert so task gradients go
// straight through to the selected expert only; the gate itself trains via
// the balance/z regularizers. Soft mode mixes experts by softmax weights,
// which keeps the gate on the task-gradient path.
inline MoeGraph moe_delta_graph(Tape& tape, const MoeParamIds& ids, NodeId x, MoeMode mode,
                                const std::vector<double>& scalings) {
  MoeGraph out{};
  out.logits = moe_gate_logits_graph(tape, ids, x);
  const Matrix& logit_values = tape.value(out.logits);
  const std::size_t n = logit_values.cols();
  const std::size_t expert_count = ids.experts.size();

  NodeId delta = 0;
  bool first = true;
  if (mode == MoeMode::Hard) {
    out.hard_assignment.resize(n);
    for (std::size_t j = 0; j < n; ++j)
      out.hard_assignment[j] = argmax_index(extract_column(logit_values, j));
    for (std::size_t e = 0; e < expert_count; ++e) {
      Matrix row(1, n);
      bool used = false;
      for (std::size_t j = 0; j < n; ++j) {
        row(0, j) = out.hard_assignment[j] == e ? 1.0 : 0.0;
        used = used || out.hard_assignment[j] == e;
      }
      if (!used) continue;
      const NodeId masked =
          tape.colwise_mul(lora_delta_graph(tape, ids.experts[e], x, scalings[e]), tape.constant(std::move(row)));
      delta = first ? masked : tape.add(delta, masked);
      first = false;
    }
    if (first) throw std::invalid_argument("moe_delta_graph: empty batch");
  } else {
    const NodeId probs = tape.softmax_cols(out.logits);
    for (std::size_t e = 0; e < expert_count; ++e) {
      const NodeId weighted =
          tape.colwise_mul(lora_delta_graph(tape, ids.experts[e], x, scalings[e]), tape.take_row(probs, e));
      delta = first ? weighted : tape.add(delta, weighted);
      first = false;
    }
  }
  out.delta = delta;
  return out;
}

// Switch-style balance on the gate (expert_count * sum_i f_i * P_i, uniform
// routing scores 1) plus the squared-logsumexp z term.
inline NodeId moe_reg_graph(Tape& tape, const MoeGraph& graph, std::size_t expert_count) {
  const Matrix& logit_values = tape.value(graph.logits);
  const std::size_t n = logit_values.cols();
  const NodeId probs = tape.softmax_cols(graph.logits);
  const NodeId mean_prob = tape.scale(tape.row_sum(probs), 1.0 / static_cast<double>(n));
  Matrix fractions(expert_count, 1);
  if (!graph.hard_assignment.empty()) {
    for (std::size_t j = 0; j < n; ++j)
      fractions(graph.hard_assignment[j], 0) += 1.0 / static_cast<double>(n);
  } else {
    const Matrix& p = tape.value(probs);
    for (std::size_t e = 0; e < expert_count; ++e) {
      std::size_t count = 0;
      for (std::size_t j = 0; j < n; ++j)
        if (argmax_index(extract_column(p, j)) == e) ++count;
      fractions(e, 0) = static_cast<double>(count) / static_cast<double>(n);
    }
  }
  const NodeId balance = tape.scale(tape.sum_all(tape.hadamard(tape.constant(std::move(fractions)), mean_prob)),
                                    static_cast<double>(expert_count));
  const NodeId lse = tape.logsumexp_cols(graph.logits);
  const NodeId z = tape.scale(tape.sum_all(tape.square(lse)), 1.0 / static_cast<double>(n));
  return tape.add(balance, z);
}

}  // namespace lorasp
