// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lorasp/csv.hpp"
#include "lorasp/svd.hpp"

namespace lorasp {

// Cumulative squared-magnitude energy of a nonnegative spectrum.
// Works identically for singular values and router scores: the input is
// squared, stably sorted nonincreasing (original index breaks ties), and
// E(k) = prefix_k / total. An all-zero spectrum is flagged degenerate and
// its cumulative curve is defined as all ones.
struct EnergyCurve {
  std::vector<double> sigma_squared;   // sorted nonincreasing
  std::vector<double> cumulative;     // E(1..r); E(r) == 1 exactly when total > 0
  std::vector<std::size_t> order;     // original index of each sorted entry
  double total_energy = 0.0;
  bool degenerate = false;
};

inline EnergyCurve cumulative_energy(std::span<const double> values) {
  EnergyCurve curve;
  curve.order.resize(values.size());
  std::iota(curve.order.begin(), curve.order.end(), std::size_t{0});
  std::vector<double> squared(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] < 0.0)
      throw std::invalid_argument("cumulative_energy: negative value at index " + std::to_string(i));
    squared[i] = values[i] * values[i];
  }
  std::stable_sort(curve.order.begin(), curve.order.end(),
                   [&](std::size_t a, std::size_t b) { return squared[a] > squared[b]; });
  curve.sigma_squared.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) curve.sigma_squared[i] = squared[curve.order[i]];

  curve.cumulative.resize(values.size());
  double prefix = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    prefix += curve.sigma_squared[i];
    curve.cumulative[i] = prefix;  // rescaled below once the total is known
  }
  curve.total_energy = prefix;
  if (prefix <= 0.0) {
    curve.degenerate = true;
    std::fill(curve.cumulative.begin(), curve.cumulative.end(), 1.0);
  } else {
    for (double& e : curve.cumulative) e /= prefix;
  }
  return curve;
}

// Smallest k with E(k) >= eta, eta in (0, 1]. Degenerate curves return 0.
inline std::size_t rank_at_energy(const EnergyCurve& curve, double eta) {
  if (!(eta > 0.0 && eta <= 1.0))
    throw std::invalid_argument("rank_at_energy: eta must be in (0,1], got " + std::to_string(eta));
  if (curve.degenerate || curve.cumulative.empty()) return 0;
  for (std::size_t k = 0; k < curve.cumulative.size(); ++k)
    if (curve.cumulative[k] >= eta) return k + 1;
  return curve.cumulative.size();
}

// Best rank-k approximation via truncated SVD.
inline Matrix truncate(const Matrix& a, std::size_t k) {
  const std::size_t p = std::min(a.rows(), a.cols());
  if (k < 1 || k > p)
    throw std::invalid_argument("truncate: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(p) + "] for " + shape_str(a));
  SvdResult s = svd(a);
  for (std::size_t i = k; i < s.sigma.size(); ++i) s.sigma[i] = 0.0;
  return s.reconstruct();
}

// ||A - A_k||_F / ||A||_F, computed from the spectrum tail; equals
// sqrt(1 - E(k)) by orthogonal invariance of the Frobenius norm.
inline double relative_error(const Matrix& a, std::size_t k) {
  const std::size_t p = std::min(a.rows(), a.cols());
  if (k < 1 || k > p)
    throw std::invalid_argument("relative_error: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(p) + "] for " + shape_str(a));
  const SvdResult s = svd(a);
  double total = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < s.sigma.size(); ++i) {
    const double sq = s.sigma[i] * s.sigma[i];
    total += sq;
    if (i >= k) tail += sq;
  }
  if (total <= 0.0)
    throw std::invalid_argument("relative_error: undefined for the zero matrix " + shape_str(a));
  return std::sqrt(tail / total);
}

struct EtaRank {
  double eta = 0.0;
  std::size_t k = 0;
  double normalized_k = 0.0;       // k / full_rank
  double rel_error_bound = 0.0;    // sqrt(1 - E(k))
};

struct LayerSpectrum {
  std::vector<double> sigma;
  EnergyCurve curve;
  std::size_t full_rank = 0;       // min(rows, cols); see report metadata
  bool degenerate = false;
  std::vector<EtaRank> ranks;      // one entry per requested eta
};

struct SpectralReport {
  std::map<std::string, LayerSpectrum> layers;
  std::vector<double> etas;
  std::map<double, double> mean_normalized_k;  // per eta, degenerate layers excluded
  // Full rank here means min(d_out, d_in), not the numerical rank.
  std::string full_rank_convention = "min(rows,cols)";
};

inline SpectralReport layer_rank_report(const std::map<std::string, Matrix>& updates,
                                        const std::vector<double>& etas) {
  if (updates.empty()) throw std::invalid_argument("layer_rank_report: empty layer map");
  SpectralReport report;
  report.etas = etas;
  std::map<double, std::pair<double, std::size_t>> sums;  // eta -> (sum, count)
  for (const auto& [name, m] : updates) {
    LayerSpectrum layer;
    layer.full_rank = std::min(m.rows(), m.cols());
    const SvdResult s = svd(m);
    layer.sigma = s.sigma;
    layer.curve = cumulative_energy(layer.sigma);
    layer.degenerate = layer.curve.degenerate;
    for (double eta : etas) {
      EtaRank r;
      r.eta = eta;
      r.k = rank_at_energy(layer.curve, eta);
      r.normalized_k = layer.degenerate ? 0.0
                                        : static_cast<double>(r.k) / static_cast<double>(layer.full_rank);
      r.rel_error_bound =
          (layer.degenerate || r.k == 0) ? 0.0
                                         : std::sqrt(std::max(0.0, 1.0 - layer.curve.cumulative[r.k - 1]));
      layer.ranks.push_back(r);
      if (!layer.degenerate) {
        sums[eta].first += r.normalized_k;
        sums[eta].second += 1;
      }
    }
    report.layers.emplace(name, std::move(layer));
  }
  for (const auto& [eta, sc] : sums)
    if (sc.second > 0) report.mean_normalized_k[eta] = sc.first / static_cast<double>(sc.second);
  return report;
}

inline CsvTable spectral_report_table(const SpectralReport& report) {
  CsvTable table;
  table.header = {"layer", "full_rank", "eta", "k", "normalized_k", "rel_error_bound"};
  for (const auto& [name, layer] : report.layers)
    for (const EtaRank& r : layer.ranks)
      table.rows.push_back({name, std::to_string(layer.full_rank), csv_num(r.eta),
                            std::to_string(r.k), csv_num(r.normalized_k), csv_num(r.rel_error_bound)});
  return table;
}

inline nlohmann::json spectral_report_json(const SpectralReport& report) {
  nlohmann::json j;
  j["full_rank_convention"] = report.full_rank_convention;
  j["etas"] = report.etas;
  for (const auto& [name, layer] : report.layers) {
    nlohmann::json lj;
    lj["full_rank"] = layer.full_rank;
    lj["degenerate"] = layer.degenerate;
    lj["sigma"] = layer.sigma;
    lj["cumulative_energy"] = layer.curve.cumulative;
    for (const EtaRank& r : layer.ranks) {
      lj["ranks"].push_back({{"eta", r.eta},
                             {"k", r.k},
                             {"normalized_k", r.normalized_k},
                             {"rel_error_bound", r.rel_error_bound}});
    }
    j["layers"][name] = std::move(lj);
  }
  for (const auto& [eta, mean] : report.mean_normalized_k)
    j["mean_normalized_k"].push_back({{"eta", eta}, {"mean", mean}});
  return j;
}

}  // namespace lorasp
