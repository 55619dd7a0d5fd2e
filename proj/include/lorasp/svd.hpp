// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "lorasp/matrix.hpp"

namespace lorasp {

// Thin SVD a = u * diag(sigma) * vt with p = min(rows, cols):
//   u : rows x p, orthonormal columns
//   sigma : p values, nonincreasing, nonnegative
//   vt : p x cols, orthonormal rows
struct SvdResult {
  Matrix u;
  std::vector<double> sigma;
  Matrix vt;

  Matrix reconstruct() const {
    Matrix scaled = u;
    for (std::size_t i = 0; i < scaled.rows(); ++i)
      for (std::size_t j = 0; j < scaled.cols(); ++j) scaled(i, j) *= sigma[j];
    return matmul(scaled, vt);
  }
};

namespace detail {

// Gram-Schmidt completion: writes into column `target` a unit vector
// orthogonal to the first `used` columns of u. Deterministic: starts from
// the standard basis vector with the largest residual (lowest index on
// ties), orthogonalized twice.
inline void fill_null_column(Matrix& u, std::size_t target, std::size_t used) {
  const std::size_t m = u.rows();
  const auto project_out = [&](std::vector<double>& cand) {
    for (std::size_t j = 0; j < used; ++j) {
      double proj = 0.0;
      for (std::size_t i = 0; i < m; ++i) proj += cand[i] * u(i, j);
      for (std::size_t i = 0; i < m; ++i) cand[i] -= proj * u(i, j);
    }
  };
  std::vector<double> best;
  double best_norm = -1.0;
  for (std::size_t e = 0; e < m; ++e) {
    std::vector<double> cand(m, 0.0);
    cand[e] = 1.0;
    project_out(cand);
    double norm2 = 0.0;
    for (double v : cand) norm2 += v * v;
    if (norm2 > best_norm) {
      best_norm = norm2;
      best = std::move(cand);
    }
  }
  project_out(best);
  double norm = 0.0;
  for (double v : best) norm += v * v;
  norm = std::sqrt(norm);
  if (norm <= 0.0) throw NumericalError("svd: failed to complete orthonormal basis");
  for (std::size_t i = 0; i < m; ++i) u(i, target) = best[i] / norm;
}

}  // namespace detail

// One-sided Jacobi SVD. Plane rotations orthogonalize the columns of a
// working copy of `a` while the same rotations accumulate into V; at
// convergence the column norms are the singular values. Deterministic
// cyclic pair ordering. Converged means a full sweep rotated nothing:
// every column pair satisfies |b_p.b_q| <= rel_tol * |b_p||b_q|, which
// pins the off-diagonal Gram norm to rounding level (far below
// 1e-12 * ||a||_F at these scales) and, unlike an absolute cutoff, keeps
// tiny-norm directions mutually orthogonal. Exceeding `max_sweeps` raises
// NumericalError naming the shape and the residual.
inline SvdResult svd(const Matrix& a, int max_sweeps = 60) {
  if (!a.is_finite()) throw NumericalError("svd: non-finite entries in " + shape_str(a) + " input");
  if (a.rows() == 0 || a.cols() == 0) throw std::invalid_argument("svd: empty matrix");

  if (a.rows() < a.cols()) {
    SvdResult t = svd(transpose(a), max_sweeps);
    return SvdResult{transpose(t.vt), std::move(t.sigma), transpose(t.u)};
  }

  const std::size_t m = a.rows(), n = a.cols();
  Matrix b = a;
  Matrix v = Matrix::identity(n);
  const double fro = frobenius_norm(a);
  // Pair-skip threshold sits above the dot-product rounding floor so the
  // relative criterion can actually be met for every pair at once.
  const double rel_tol = 8.0 * std::numeric_limits<double>::epsilon() * static_cast<double>(m);

  const auto col_dot = [&](const Matrix& w, std::size_t p, std::size_t q) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i) s += w(i, p) * w(i, q);
    return s;
  };

  double off = 0.0;
  bool converged = (fro == 0.0);
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    double off2 = 0.0;
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = col_dot(b, p, p);
        const double beta = col_dot(b, q, q);
        const double gamma = col_dot(b, p, q);
        off2 += gamma * gamma;
        if (std::abs(gamma) <= rel_tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double bp = b(i, p), bq = b(i, q);
          b(i, p) = c * bp - s * bq;
          b(i, q) = s * bp + c * bq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    off = std::sqrt(2.0 * off2);
    converged = !rotated;
  }
  if (!converged)
    throw NumericalError("svd: no convergence on " + shape_str(a) + " after " +
                         std::to_string(max_sweeps) + " sweeps, off-diagonal residual " +
                         std::to_string(off));

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = std::sqrt(col_dot(b, j, j));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  const double sigma_max = norms.empty() ? 0.0 : norms[order[0]];
  const double rank_tol =
      sigma_max * static_cast<double>(std::max(m, n)) * std::numeric_limits<double>::epsilon();

  SvdResult out;
  out.sigma.resize(n);
  out.u = Matrix(m, n);
  out.vt = Matrix(n, n);
  std::size_t kept = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    for (std::size_t i = 0; i < n; ++i) out.vt(j, i) = v(i, src);
    if (norms[src] > rank_tol) {
      out.sigma[j] = norms[src];
      for (std::size_t i = 0; i < m; ++i) out.u(i, j) = b(i, src) / norms[src];
      kept = j + 1;
    } else {
      out.sigma[j] = 0.0;
    }
  }
  for (std::size_t j = kept; j < n; ++j) detail::fill_null_column(out.u, j, j);
  return out;
}

}  // namespace lorasp
