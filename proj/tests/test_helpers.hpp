// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "lorasp/matrix.hpp"
#include "lorasp/rng.hpp"
#include "lorasp/tape.hpp"

namespace lorasp::testutil {

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev = 1.0) {
  return rng.gaussian_matrix(rows, cols, stddev);
}

inline double max_abs(const Matrix& m) {
  double v = 0.0;
  for (double x : m.values()) v = std::max(v, std::abs(x));
  return v;
}

// Central finite differences (step 1e-5) against the tape gradient.
// `build` must add every entry of `params` via tape.parameter and return a
// scalar loss node. The error metric is |analytic - fd| / (max(|analytic|,
// |fd|) + 1e-3), so near-zero gradients are compared absolutely.
struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst_param;
};

template <typename BuildLoss>
GradCheck check_gradients(BuildLoss&& build, std::map<std::string, Matrix> params,
                          double step = 1e-5) {
  GradMap analytic;
  {
    Tape tape;
    const NodeId loss = build(tape, params);
    analytic = tape.backward(loss);
  }
  const auto eval = [&](const std::map<std::string, Matrix>& p) {
    Tape tape;
    return tape.scalar_value(build(tape, p));
  };

  GradCheck result;
  for (auto& [name, value] : params) {
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + step;
      const double plus = eval(params);
      value.data()[i] = saved - step;
      const double minus = eval(params);
      value.data()[i] = saved;
      const double fd = (plus - minus) / (2.0 * step);
      const double a = analytic.at(name).data()[i];
      const double err = std::abs(a - fd) / (std::max(std::abs(a), std::abs(fd)) + 1e-3);
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

// Independent spectral oracle: classical two-sided cyclic Jacobi
// eigensolver for symmetric matrices. Returns eigenvalues sorted
// nonincreasing. Deliberately a different algorithm from the library SVD.
inline std::vector<double> symmetric_eigenvalues(Matrix s, int max_sweeps = 100) {
  const std::size_t n = s.rows();
  if (s.cols() != n) throw std::invalid_argument("symmetric_eigenvalues: matrix not square");
  double norm = frobenius_norm(s);
  if (norm == 0.0) return std::vector<double>(n, 0.0);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * s(p, q) * s(p, q);
    if (std::sqrt(off) <= 1e-14 * norm) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(s(p, q)) <= 1e-300) continue;
        const double theta = (s(q, q) - s(p, p)) / (2.0 * s(p, q));
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = c * t;
        for (std::size_t i = 0; i < n; ++i) {
          const double sip = s(i, p), siq = s(i, q);
          s(i, p) = c * sip - sn * siq;
          s(i, q) = sn * sip + c * siq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double spi = s(p, i), sqi = s(q, i);
          s(p, i) = c * spi - sn * sqi;
          s(q, i) = sn * spi + c * sqi;
        }
      }
    }
  }
  std::vector<double> eigen(n);
  for (std::size_t i = 0; i < n; ++i) eigen[i] = s(i, i);
  std::sort(eigen.begin(), eigen.end(), std::greater<double>());
  return eigen;
}

}  // namespace lorasp::testutil
