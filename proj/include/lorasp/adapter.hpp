// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "lorasp/rng.hpp"
#include "lorasp/spectral.hpp"
#include "lorasp/tape.hpp"

namespace lorasp {

// Input-conditioned low-rank adapter: a wide vector bank (u, v) shared
// across inputs, a two-layer scoring router whose softplus outputs act as
// data-conditioned singular values, and an energy-target gate that keeps
// the smallest set of vectors reaching cumulative squared-score energy eta.

struct AdapterConfig {
  std::size_t r_init = 128;
  double eta = 0.9;
  double spec_weight = 1e-2;
  double router_weight = 1e-3;
  std::size_t hidden_dim = 0;  // 0 -> max(1, r_init / 4)

  std::size_t resolved_hidden() const {
    return hidden_dim != 0 ? hidden_dim : std::max<std::size_t>(1, r_init / 4);
  }

  void validate() const {
    if (r_init < 1) throw std::invalid_argument("adapter config: r_init must be >= 1");
    if (!(eta > 0.0 && eta <= 1.0))
      throw std::invalid_argument("adapter config: eta must be in (0,1], got " + std::to_string(eta));
    if (spec_weight < 0.0 || router_weight < 0.0)
      throw std::invalid_argument("adapter config: loss weights must be nonnegative");
  }
};

struct VectorBank {
  Matrix u;  // d_out x r
  Matrix v;  // r x d_in
  std::size_t r_init = 0;
};

struct RouterParams {
  Matrix w1;  // h x d_in
  Matrix b1;  // h x 1
  Matrix w2;  // r x h
  Matrix b2;  // r x 1
  std::size_t hidden_dim = 0;
};

// Per-input gating outcome. `order` sorts squared scores nonincreasing;
// `mask` has exactly k ones at order[0..k).
struct SelectionResult {
  std::vector<double> scores;
  std::vector<std::size_t> order;
  std::size_t k = 0;
  double energy_k = 1.0;
  std::vector<double> mask;
  bool degenerate = false;
};

inline void validate_adapter(const VectorBank& bank, const RouterParams& router) {
  const std::size_t r = bank.r_init;
  if (bank.u.cols() != r || bank.v.rows() != r)
    throw std::invalid_argument("adapter: bank shapes inconsistent with r_init=" + std::to_string(r) +
                                " (u " + shape_str(bank.u) + ", v " + shape_str(bank.v) + ")");
  if (router.w2.rows() != r || router.b2.rows() != r)
    throw std::invalid_argument("adapter: router output dim " + std::to_string(router.w2.rows()) +
                                " != bank r_init " + std::to_string(r));
  if (router.w1.rows() != router.hidden_dim || router.w2.cols() != router.hidden_dim)
    throw std::invalid_argument("adapter: router hidden dims inconsistent");
}

// u starts at zero so the adapter is an exact no-op before training; v and
// the router weights are Gaussian with 1/sqrt(fan_in) scale, biases zero.
// Each parameter draws from its own named sub-stream of `seed`.
inline std::pair<VectorBank, RouterParams> init_adapter(std::size_t d_in, std::size_t d_out,
                                                        const AdapterConfig& config,
                                                        std::uint64_t seed,
                                                        const std::string& stream_prefix = "adapter") {
  if (d_in < 1 || d_out < 1) throw std::invalid_argument("init_adapter: dims must be >= 1");
  config.validate();
  const std::size_t r = config.r_init;
  const std::size_t h = config.resolved_hidden();

  VectorBank bank;
  bank.r_init = r;
  bank.u = Matrix(d_out, r);
  bank.v = Rng::stream(seed, stream_prefix + ".v").gaussian_matrix(r, d_in, 1.0 / std::sqrt(double(d_in)));

  RouterParams router;
  router.hidden_dim = h;
  router.w1 =
      Rng::stream(seed, stream_prefix + ".router.w1").gaussian_matrix(h, d_in, 1.0 / std::sqrt(double(d_in)));
  router.b1 = Matrix(h, 1);
  router.w2 =
      Rng::stream(seed, stream_prefix + ".router.w2").gaussian_matrix(r, h, 1.0 / std::sqrt(double(h)));
  router.b2 = Matrix(r, 1);
  return {std::move(bank), std::move(router)};
}

inline std::size_t adapter_param_count(std::size_t d_in, std::size_t d_out, const AdapterConfig& config) {
  const std::size_t r = config.r_init;
  const std::size_t h = config.resolved_hidden();
  return d_out * r + r * d_in + h * d_in + h + r * h + r;
}

struct RouteResult {
  Matrix scores;  // r x n, strictly positive
  Matrix logits;  // r x n, pre-softplus
};

// s(x) = softplus(w2 * relu(w1 x + b1) + b2); columns of x route independently.
inline RouteResult route(const Matrix& x, const RouterParams& router) {
  if (x.rows() != router.w1.cols())
    throw std::invalid_argument("route: input " + shape_str(x) + " vs w1 " + shape_str(router.w1));
  const Matrix h1 = relu(add_col_broadcast(matmul(router.w1, x), router.b1));
  RouteResult out;
  out.logits = add_col_broadcast(matmul(router.w2, h1), router.b2);
  out.scores = softplus(out.logits);
  return out;
}

// Energy gate: keep the smallest set of vectors whose cumulative squared
// score reaches eta. Total squared score below 1e-24 is degenerate: k = 0,
// empty mask, energy defined as 1.
inline SelectionResult select(std::span<const double> scores, double eta) {
  const EnergyCurve curve = cumulative_energy(scores);
  SelectionResult sel;
  sel.scores.assign(scores.begin(), scores.end());
  sel.order = curve.order;
  sel.mask.assign(scores.size(), 0.0);
  if (curve.total_energy < 1e-24) {
    sel.degenerate = true;
    sel.k = 0;
    sel.energy_k = 1.0;
    return sel;
  }
  sel.k = rank_at_energy(curve, eta);
  sel.energy_k = curve.cumulative[sel.k - 1];
  for (std::size_t i = 0; i < sel.k; ++i) sel.mask[sel.order[i]] = 1.0;
  return sel;
}

inline SelectionResult select(const Matrix& scores_column, double eta) {
  if (scores_column.cols() != 1)
    throw std::invalid_argument("select: expected a column of scores, got " + shape_str(scores_column));
  return select(scores_column.values(), eta);
}

inline std::vector<SelectionResult> select_columns(const Matrix& scores, double eta) {
  std::vector<SelectionResult> out;
  out.reserve(scores.cols());
  for (std::size_t j = 0; j < scores.cols(); ++j) {
    std::vector<double> col(scores.rows());
    for (std::size_t i = 0; i < scores.rows(); ++i) col[i] = scores(i, j);
    out.push_back(select(std::span<const double>(col), eta));
  }
  return out;
}

// delta_y = u * (mask .* s .* (v x)); factored, never materializes the
// d_out x d_in update.
inline Matrix apply_adapter(const Matrix& x, const VectorBank& bank, const SelectionResult& sel) {
  if (x.cols() != 1 || x.rows() != bank.v.cols())
    throw std::invalid_argument("apply_adapter: input " + shape_str(x) + " vs v " + shape_str(bank.v));
  if (sel.scores.size() != bank.r_init)
    throw std::invalid_argument("apply_adapter: selection size " + std::to_string(sel.scores.size()) +
                                " != r_init " + std::to_string(bank.r_init));
  Matrix gated = matmul(bank.v, x);  // r x 1
  for (std::size_t i = 0; i < bank.r_init; ++i) gated(i, 0) *= sel.mask[i] * sel.scores[i];
  return matmul(bank.u, gated);
}

// 1 - E_k(x); zero for degenerate selections.
inline double spectral_loss(const SelectionResult& sel) {
  if (sel.degenerate) return 0.0;
  return 1.0 - sel.energy_k;
}

// Balance term (r / mean_k) * sum_i f_i * P_i where f_i is the fraction of
// inputs with vector i active and P_i the batch-mean normalized squared
// score, so perfectly uniform usage scores exactly 1; plus a z term, the
// batch-mean squared logsumexp of the pre-softplus logits.
inline double router_regularization(const std::vector<SelectionResult>& selections,
                                    const Matrix& logits) {
  if (selections.empty()) throw std::invalid_argument("router_regularization: empty batch");
  if (logits.cols() != selections.size())
    throw std::invalid_argument("router_regularization: logits " + shape_str(logits) + " vs batch " +
                                std::to_string(selections.size()));
  const std::size_t r = selections.front().scores.size();
  const double n = static_cast<double>(selections.size());

  std::vector<double> active_fraction(r, 0.0), mean_energy(r, 0.0);
  double mean_k = 0.0;
  for (const SelectionResult& sel : selections) {
    mean_k += static_cast<double>(sel.k) / n;
    double total = 0.0;
    for (double s : sel.scores) total += s * s;
    const double denom = sel.degenerate ? total + 1.0 : total;
    for (std::size_t i = 0; i < r; ++i) {
      active_fraction[i] += sel.mask[i] / n;
      mean_energy[i] += sel.scores[i] * sel.scores[i] / denom / n;
    }
  }
  double balance = 0.0;
  if (mean_k > 0.0) {
    for (std::size_t i = 0; i < r; ++i) balance += active_fraction[i] * mean_energy[i];
    balance *= static_cast<double>(r) / mean_k;
  }

  double z = 0.0;
  for (std::size_t j = 0; j < logits.cols(); ++j) {
    double mx = logits(0, j);
    for (std::size_t i = 1; i < logits.rows(); ++i) mx = std::max(mx, logits(i, j));
    double s = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) s += std::exp(logits(i, j) - mx);
    const double lse = mx + std::log(s);
    z += lse * lse / n;
  }
  return balance + z;
}

// y = w0 x + adapter delta under the eta gate; the selection made for this
// input is reported through `out_selection` for metrics.
inline Matrix forward_adapted(const Matrix& x, const Matrix& w0, const VectorBank& bank,
                              const RouterParams& router, double eta,
                              SelectionResult* out_selection = nullptr) {
  validate_adapter(bank, router);
  const RouteResult routed = route(x, router);
  SelectionResult sel = select(routed.scores, eta);
  Matrix y = add(matmul(w0, x), apply_adapter(x, bank, sel));
  if (out_selection) *out_selection = std::move(sel);
  return y;
}

// ---------------------------------------------------------------------------
// Tape graph builders. Selections are made from eagerly computed score
// values and enter the graph as constants, so k and the mask act as
// constants during backward (straight-through); the spectral loss still
// reaches every score through the energy denominator.

struct AdapterParamIds {
  NodeId u, v, w1, b1, w2, b2;
};

inline AdapterParamIds add_adapter_parameters(Tape& tape, const std::string& prefix,
                                              const VectorBank& bank, const RouterParams& router) {
  AdapterParamIds ids{};
  ids.u = tape.parameter(prefix + ".u", bank.u);
  ids.v = tape.parameter(prefix + ".v", bank.v);
  ids.w1 = tape.parameter(prefix + ".router.w1", router.w1);
  ids.b1 = tape.parameter(prefix + ".router.b1", router.b1);
  ids.w2 = tape.parameter(prefix + ".router.w2", router.w2);
  ids.b2 = tape.parameter(prefix + ".router.b2", router.b2);
  return ids;
}

struct RouteIds {
  NodeId logits, scores;
};

inline RouteIds route_graph(Tape& tape, const AdapterParamIds& ids, NodeId x) {
  const NodeId h1 = tape.relu(tape.add_col(tape.matmul(ids.w1, x), ids.b1));
  RouteIds out{};
  out.logits = tape.add_col(tape.matmul(ids.w2, h1), ids.b2);
  out.scores = tape.softplus(out.logits);
  return out;
}

inline Matrix selection_mask_matrix(const std::vector<SelectionResult>& selections, std::size_t r) {
  Matrix mask(r, selections.size());
  for (std::size_t j = 0; j < selections.size(); ++j)
    for (std::size_t i = 0; i < r; ++i) mask(i, j) = selections[j].mask[i];
  return mask;
}

// u * (mask .* s .* (v x)) over a batch of columns.
inline NodeId adapter_delta_graph(Tape& tape, const AdapterParamIds& ids, NodeId scores, NodeId x,
                                  const std::vector<SelectionResult>& selections) {
  const Matrix& s = tape.value(scores);
  const NodeId mask = tape.constant(selection_mask_matrix(selections, s.rows()));
  const NodeId gated = tape.hadamard(mask, tape.hadamard(scores, tape.matmul(ids.v, x)));
  return tape.matmul(ids.u, gated);
}

// Batch mean of 1 - E_k(x) over non-degenerate columns (0 if none).
inline NodeId spectral_loss_graph(Tape& tape, NodeId scores, const std::vector<SelectionResult>& selections) {
  const Matrix& s = tape.value(scores);
  const std::size_t r = s.rows(), n = s.cols();
  Matrix pruned_mask(r, n), valid_row(1, n), degenerate_row(1, n);
  std::size_t n_valid = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const bool valid = !selections[j].degenerate;
    valid_row(0, j) = valid ? 1.0 : 0.0;
    degenerate_row(0, j) = valid ? 0.0 : 1.0;
    if (valid) ++n_valid;
    for (std::size_t i = 0; i < r; ++i) pruned_mask(i, j) = 1.0 - selections[j].mask[i];
  }
  if (n_valid == 0) return tape.constant_scalar(0.0);
  const NodeId s2 = tape.square(scores);
  const NodeId pruned = tape.col_sum(tape.hadamard(tape.constant(std::move(pruned_mask)), s2));
  // +1 on degenerate columns keeps the ratio finite; those columns are
  // masked out of the mean anyway.
  const NodeId total = tape.add(tape.col_sum(s2), tape.constant(std::move(degenerate_row)));
  const NodeId ratio = tape.hadamard(tape.div_elem(pruned, total), tape.constant(std::move(valid_row)));
  return tape.scale(tape.sum_all(ratio), 1.0 / static_cast<double>(n_valid));
}

// Differentiable version of router_regularization; activation fractions and
// mean_k enter as constants.
inline NodeId router_reg_graph(Tape& tape, NodeId scores, NodeId logits,
                               const std::vector<SelectionResult>& selections) {
  const Matrix& s = tape.value(scores);
  const std::size_t r = s.rows(), n = s.cols();
  Matrix fractions(r, 1), degenerate_row(1, n);
  double mean_k = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    mean_k += static_cast<double>(selections[j].k) / static_cast<double>(n);
    degenerate_row(0, j) = selections[j].degenerate ? 1.0 : 0.0;
    for (std::size_t i = 0; i < r; ++i)
      fractions(i, 0) += selections[j].mask[i] / static_cast<double>(n);
  }
  const NodeId s2 = tape.square(scores);
  const NodeId total = tape.add(tape.col_sum(s2), tape.constant(std::move(degenerate_row)));
  const NodeId normalized = tape.colwise_div(s2, total);
  const NodeId mean_energy = tape.scale(tape.row_sum(normalized), 1.0 / static_cast<double>(n));
  NodeId reg;
  if (mean_k > 0.0) {
    const NodeId weighted = tape.hadamard(tape.constant(std::move(fractions)), mean_energy);
    reg = tape.scale(tape.sum_all(weighted), static_cast<double>(r) / mean_k);
  } else {
    reg = tape.constant_scalar(0.0);
  }
  const NodeId lse = tape.logsumexp_cols(logits);
  const NodeId z = tape.scale(tape.sum_all(tape.square(lse)), 1.0 / static_cast<double>(n));
  return tape.add(reg, z);
}

}  // namespace lorasp
