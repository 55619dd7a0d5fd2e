// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "lorasp/spectral.hpp"
#include "test_helpers.hpp"

using namespace lorasp;

namespace {

// Direct-summation oracle: E(k) computed entry by entry from the raw
// definition, no shared code with cumulative_energy.
std::vector<double> energy_oracle(std::vector<double> values) {
  for (double& v : values) v *= v;
  std::sort(values.begin(), values.end(), std::greater<double>());
  double total = 0.0;
  for (double v : values) total += v;
  std::vector<double> out;
  for (std::size_t k = 1; k <= values.size(); ++k) {
    double prefix = 0.0;
    for (std::size_t i = 0; i < k; ++i) prefix += values[i];
    out.push_back(prefix / total);
  }
  return out;
}

TEST(Spectral, SingleDirectionEnergy) {
  const std::vector<double> sigma = {3.0, 0.0, 0.0};
  const EnergyCurve curve = cumulative_energy(sigma);
  EXPECT_FALSE(curve.degenerate);
  EXPECT_EQ(curve.cumulative, (std::vector<double>{1.0, 1.0, 1.0}));
}

TEST(Spectral, TwoValueEnergy) {
  const std::vector<double> sigma = {2.0, 1.0};
  const EnergyCurve curve = cumulative_energy(sigma);
  EXPECT_NEAR(curve.cumulative[0], 0.8, 1e-15);
  EXPECT_DOUBLE_EQ(curve.cumulative[1], 1.0);
}

TEST(Spectral, EnergyMatchesDirectSummationOracle) {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> values(10);
    for (double& v : values) v = std::abs(rng.gaussian());
    const EnergyCurve curve = cumulative_energy(values);
    const std::vector<double> oracle = energy_oracle(values);
    for (std::size_t k = 0; k < values.size(); ++k)
      EXPECT_NEAR(curve.cumulative[k], oracle[k], 1e-14);
  }
}

TEST(Spectral, EnergyReachesExactlyOne) {
  Rng rng(42);
  std::vector<double> values(12);
  for (std::size_t i = 0; i < 7; ++i) values[i] = std::abs(rng.gaussian());
  const EnergyCurve curve = cumulative_energy(values);
  for (std::size_t k = 6; k < values.size(); ++k) EXPECT_EQ(curve.cumulative[k], 1.0);
}

TEST(Spectral, DegenerateSpectrumFlagged) {
  const EnergyCurve curve = cumulative_energy(std::vector<double>{0.0, 0.0});
  EXPECT_TRUE(curve.degenerate);
  EXPECT_EQ(curve.cumulative, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(rank_at_energy(curve, 0.9), 0u);
}

TEST(Spectral, NegativeInputRejected) {
  EXPECT_THROW(cumulative_energy(std::vector<double>{1.0, -0.5}), std::invalid_argument);
}

TEST(Spectral, RankAtEnergyHandCases) {
  const EnergyCurve curve = cumulative_energy(std::vector<double>{2.0, 1.0});
  EXPECT_EQ(rank_at_energy(curve, 0.9), 2u);
  EXPECT_EQ(rank_at_energy(curve, 0.7), 1u);
  EXPECT_THROW(rank_at_energy(curve, 0.0), std::invalid_argument);
  EXPECT_THROW(rank_at_energy(curve, 1.5), std::invalid_argument);
}

TEST(Spectral, RankAtEnergyNondecreasingInEta) {
  Rng rng(43);
  std::vector<double> values(20);
  for (double& v : values) v = std::abs(rng.gaussian());
  const EnergyCurve curve = cumulative_energy(values);
  std::size_t prev = 0;
  for (double eta : {0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0}) {
    const std::size_t k = rank_at_energy(curve, eta);
    EXPECT_GE(k, prev);
    prev = k;
  }
}

TEST(Spectral, TruncationErrorBoundAtEta) {
  // sqrt(1 - E(k)) <= sqrt(1 - eta) never holds in general, but at the
  // selected k the captured energy is at least eta, so the bound does.
  Rng rng(44);
  std::vector<double> values(30);
  for (double& v : values) v = std::abs(rng.gaussian());
  const EnergyCurve curve = cumulative_energy(values);
  const std::size_t k = rank_at_energy(curve, 0.99);
  EXPECT_LE(std::sqrt(1.0 - curve.cumulative[k - 1]), 0.1 + 1e-12);
}

TEST(Spectral, TruncateAtFullRankReturnsMatrix) {
  Rng rng(45);
  const Matrix a = rng.gaussian_matrix(7, 5, 1.0);
  const Matrix back = truncate(a, 5);
  EXPECT_LE(frobenius_norm(sub(a, back)), 1e-9 * frobenius_norm(a));
}

TEST(Spectral, TruncateDiagonal) {
  const Matrix a = Matrix::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 1}});
  const Matrix t = truncate(a, 2);
  EXPECT_LE(max_abs_diff(t, Matrix::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 0}})), 1e-12);
}

TEST(Spectral, TruncateTailSumIdentity) {
  Rng rng(46);
  const Matrix a = rng.gaussian_matrix(8, 6, 1.0);
  const SvdResult s = svd(a);
  const Matrix a3 = truncate(a, 3);
  const double err2 = std::pow(frobenius_norm(sub(a, a3)), 2);
  double tail = 0.0;
  for (std::size_t i = 3; i < s.sigma.size(); ++i) tail += s.sigma[i] * s.sigma[i];
  EXPECT_NEAR(err2, tail, 1e-10 * tail);
}

TEST(Spectral, TruncateRangeChecked) {
  const Matrix a(4, 3, 1.0);
  EXPECT_THROW(truncate(a, 0), std::invalid_argument);
  EXPECT_THROW(truncate(a, 4), std::invalid_argument);
}

TEST(Spectral, RelativeErrorHandCase) {
  const Matrix a = Matrix::from_rows({{2, 0}, {0, 1}});
  EXPECT_NEAR(relative_error(a, 1), std::sqrt(0.2), 1e-12);
  EXPECT_NEAR(relative_error(a, 2), 0.0, 1e-12);
}

TEST(Spectral, RelativeErrorMatchesExplicitSubtraction) {
  Rng rng(47);
  const Matrix a = rng.gaussian_matrix(12, 9, 1.0);
  for (std::size_t k = 1; k <= 9; ++k) {
    const double direct = frobenius_norm(sub(a, truncate(a, k))) / frobenius_norm(a);
    EXPECT_NEAR(relative_error(a, k), direct, 1e-10);
  }
}

TEST(Spectral, RelativeErrorZeroMatrixRejected) {
  EXPECT_THROW(relative_error(Matrix(3, 3), 1), std::invalid_argument);
}

TEST(Spectral, EckartYoungIdentity) {
  Rng rng(48);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 2 + rng.index(63);
    const std::size_t cols = 2 + rng.index(47);
    const Matrix a = rng.gaussian_matrix(rows, cols, 1.0);
    const std::vector<double> sigma = svd(a).sigma;
    const EnergyCurve curve = cumulative_energy(sigma);
    for (std::size_t k = 1; k <= std::min(rows, cols); ++k) {
      EXPECT_NEAR(relative_error(a, k), std::sqrt(std::max(0.0, 1.0 - curve.cumulative[k - 1])), 1e-10);
    }
  }
}

TEST(Spectral, EckartYoungLowerBound) {
  Rng rng(49);
  const Matrix a = rng.gaussian_matrix(10, 8, 1.0);
  for (std::size_t k : {1u, 3u, 6u}) {
    const double best = frobenius_norm(sub(a, truncate(a, k)));
    for (int trial = 0; trial < 100; ++trial) {
      const Matrix b = matmul(rng.gaussian_matrix(10, k, 1.0), rng.gaussian_matrix(k, 8, 1.0));
      EXPECT_GE(frobenius_norm(sub(a, b)), best - 1e-12);
    }
  }
}

TEST(Spectral, RelativeErrorStrictlyDecreasesWhileTailPositive) {
  Rng rng(50);
  const Matrix a = rng.gaussian_matrix(9, 7, 1.0);
  const std::vector<double> sigma = svd(a).sigma;
  double prev = relative_error(a, 1);
  for (std::size_t k = 2; k <= 7; ++k) {
    const double cur = relative_error(a, k);
    if (sigma[k - 1] > 1e-12) EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(Spectral, LayerReportSingleDiagonal) {
  std::map<std::string, Matrix> updates;
  updates["only"] = Matrix::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 1}});
  const SpectralReport report = layer_rank_report(updates, {0.99});
  // E(2) = 13/14 < 0.99, so all three values are needed.
  EXPECT_EQ(report.layers.at("only").ranks[0].k, 3u);
}

TEST(Spectral, LayerReportPlantedRankWithNoise) {
  Rng rng(51);
  Matrix planted = matmul(rng.gaussian_matrix(16, 2, 1.0), rng.gaussian_matrix(2, 12, 1.0));
  const Matrix noise = rng.gaussian_matrix(16, 12, 1e-8);
  std::map<std::string, Matrix> updates;
  updates["planted"] = add(planted, noise);
  const SpectralReport report = layer_rank_report(updates, {0.99});
  EXPECT_EQ(report.layers.at("planted").ranks[0].k, 2u);
}

TEST(Spectral, LayerReportNormalizedRankOrdering) {
  Rng rng(52);
  std::map<std::string, Matrix> updates;
  updates["low"] = matmul(rng.gaussian_matrix(32, 2, 1.0), rng.gaussian_matrix(2, 32, 1.0));
  updates["high"] = matmul(rng.gaussian_matrix(32, 24, 1.0), rng.gaussian_matrix(24, 32, 1.0));
  const SpectralReport report = layer_rank_report(updates, {0.99});
  EXPECT_LT(report.layers.at("low").ranks[0].normalized_k,
            report.layers.at("high").ranks[0].normalized_k);
}

TEST(Spectral, LayerReportDegenerateExcludedFromAggregates) {
  Rng rng(53);
  std::map<std::string, Matrix> updates;
  updates["live"] = rng.gaussian_matrix(6, 6, 1.0);
  updates["dead"] = Matrix(6, 6);
  const SpectralReport report = layer_rank_report(updates, {0.9});
  EXPECT_TRUE(report.layers.at("dead").degenerate);
  EXPECT_FALSE(report.layers.at("live").degenerate);
  const double live_norm = report.layers.at("live").ranks[0].normalized_k;
  EXPECT_NEAR(report.mean_normalized_k.at(0.9), live_norm, 1e-15);
}

TEST(Spectral, EmptyLayerMapRejected) {
  EXPECT_THROW(layer_rank_report({}, {0.9}), std::invalid_argument);
}

TEST(Spectral, ReportCsvAndJsonMirror) {
  Rng rng(54);
  std::map<std::string, Matrix> updates;
  updates["m"] = rng.gaussian_matrix(5, 4, 1.0);
  const SpectralReport report = layer_rank_report(updates, {0.9, 0.99});
  const CsvTable table = spectral_report_table(report);
  EXPECT_EQ(table.header,
            (std::vector<std::string>{"layer", "full_rank", "eta", "k", "normalized_k", "rel_error_bound"}));
  EXPECT_EQ(table.rows.size(), 2u);
  const nlohmann::json j = spectral_report_json(report);
  EXPECT_EQ(j.at("layers").at("m").at("full_rank").get<std::size_t>(), 4u);
  EXPECT_EQ(j.at("etas").size(), 2u);
}

}  // namespace
