// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "lorasp/svd.hpp"
#include "test_helpers.hpp"

using namespace lorasp;

namespace {

double orthonormality_defect(const Matrix& q) {
  // max |q^T q - I| over entries; q has orthonormal columns when ~0.
  const Matrix gram = matmul(transpose(q), q);
  double defect = 0.0;
  for (std::size_t i = 0; i < gram.rows(); ++i)
    for (std::size_t j = 0; j < gram.cols(); ++j)
      defect = std::max(defect, std::abs(gram(i, j) - (i == j ? 1.0 : 0.0)));
  return defect;
}

void expect_valid_svd(const Matrix& a, const SvdResult& s, double tol = 1e-9) {
  const double fro = frobenius_norm(a);
  EXPECT_LE(frobenius_norm(sub(a, s.reconstruct())), tol * std::max(fro, 1e-300));
  EXPECT_LE(orthonormality_defect(s.u), tol);
  EXPECT_LE(orthonormality_defect(transpose(s.vt)), tol);
  for (std::size_t i = 0; i + 1 < s.sigma.size(); ++i) EXPECT_GE(s.sigma[i], s.sigma[i + 1]);
  EXPECT_GE(s.sigma.back(), 0.0);
}

TEST(Svd, DiagonalMatrix) {
  const Matrix a = Matrix::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 1}});
  const SvdResult s = svd(a);
  ASSERT_EQ(s.sigma.size(), 3u);
  EXPECT_NEAR(s.sigma[0], 3.0, 1e-12);
  EXPECT_NEAR(s.sigma[1], 2.0, 1e-12);
  EXPECT_NEAR(s.sigma[2], 1.0, 1e-12);
  expect_valid_svd(a, s);
}

TEST(Svd, RankOneOuterProduct) {
  Rng rng(21);
  Matrix u = rng.gaussian_matrix(5, 1, 1.0);
  Matrix v = rng.gaussian_matrix(4, 1, 1.0);
  const double un = frobenius_norm(u), vn = frobenius_norm(v);
  u = scale(u, 2.0 / un);  // ||u|| = 2
  v = scale(v, 1.0 / vn);  // ||v|| = 1
  const Matrix a = matmul(u, transpose(v));
  const SvdResult s = svd(a);
  EXPECT_NEAR(s.sigma[0], 2.0, 1e-10);
  for (std::size_t i = 1; i < s.sigma.size(); ++i) EXPECT_EQ(s.sigma[i], 0.0);
  expect_valid_svd(a, s);
}

TEST(Svd, RandomMatricesReconstructAndStayOrthonormal) {
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + rng.index(64);
    const std::size_t cols = 1 + rng.index(64);
    const Matrix a = rng.gaussian_matrix(rows, cols, 1.0);
    expect_valid_svd(a, svd(a));
  }
}

TEST(Svd, SingularValuesMatchEigenOracle) {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = rng.gaussian_matrix(8, 6, 1.0);
    const SvdResult s = svd(a);
    const std::vector<double> eigen = testutil::symmetric_eigenvalues(matmul(transpose(a), a));
    ASSERT_EQ(eigen.size(), s.sigma.size());
    for (std::size_t i = 0; i < s.sigma.size(); ++i)
      EXPECT_NEAR(s.sigma[i], std::sqrt(std::max(0.0, eigen[i])), 1e-8 * std::max(1.0, s.sigma[0]));
  }
}

TEST(Svd, ExactRankDeficiency) {
  Rng rng(24);
  const Matrix a = matmul(rng.gaussian_matrix(8, 3, 1.0), rng.gaussian_matrix(3, 6, 1.0));
  const SvdResult s = svd(a);
  for (std::size_t i = 3; i < s.sigma.size(); ++i) EXPECT_EQ(s.sigma[i], 0.0);
  EXPECT_GT(s.sigma[2], 0.0);
  expect_valid_svd(a, s);
}

TEST(Svd, WideMatrixShapes) {
  Rng rng(25);
  const Matrix a = rng.gaussian_matrix(4, 9, 1.0);
  const SvdResult s = svd(a);
  EXPECT_EQ(s.u.rows(), 4u);
  EXPECT_EQ(s.u.cols(), 4u);
  EXPECT_EQ(s.sigma.size(), 4u);
  EXPECT_EQ(s.vt.rows(), 4u);
  EXPECT_EQ(s.vt.cols(), 9u);
  expect_valid_svd(a, s);
}

TEST(Svd, ZeroMatrix) {
  const Matrix a(6, 4);
  const SvdResult s = svd(a);
  for (double sigma : s.sigma) EXPECT_EQ(sigma, 0.0);
  EXPECT_LE(orthonormality_defect(s.u), 1e-12);
}

TEST(Svd, TinyClusteredSpectrum) {
  // Well-separated large value plus a tiny cluster: orthonormality must
  // survive the scale gap.
  Rng rng(26);
  Matrix d(6, 6);
  d(0, 0) = 1.0;
  d(1, 1) = 1e-7;
  d(2, 2) = 1e-7 * (1.0 + 1e-9);
  d(3, 3) = 1e-7 * (1.0 - 1e-9);
  const SvdResult qa = svd(rng.gaussian_matrix(6, 6, 1.0));
  const SvdResult qb = svd(rng.gaussian_matrix(6, 6, 1.0));
  const Matrix a = matmul(matmul(qa.u, d), qb.vt);
  expect_valid_svd(a, svd(a));
}

TEST(Svd, NonConvergenceNamesShapeAndResidual) {
  Rng rng(27);
  const Matrix a = rng.gaussian_matrix(6, 6, 1.0);
  try {
    svd(a, /*max_sweeps=*/1);
    FAIL() << "expected non-convergence";
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("6x6"), std::string::npos);
    EXPECT_NE(msg.find("residual"), std::string::npos);
  }
}

TEST(Svd, EmptyMatrixRejected) { EXPECT_THROW(svd(Matrix()), std::invalid_argument); }

}  // namespace
