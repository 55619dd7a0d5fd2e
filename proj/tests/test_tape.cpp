// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "lorasp/tape.hpp"
#include "test_helpers.hpp"

using namespace lorasp;
using lorasp::testutil::check_gradients;

namespace {

TEST(Tape, SumGradientIsAllOnes) {
  Tape tape;
  Rng rng(31);
  const Matrix p = rng.gaussian_matrix(4, 3, 1.0);
  const NodeId pid = tape.parameter("p", p);
  const GradMap grads = tape.backward(tape.sum_all(pid));
  EXPECT_EQ(grads.at("p"), Matrix(4, 3, 1.0));
}

TEST(Tape, SquaredNormGradientIsTwoP) {
  Tape tape;
  Rng rng(32);
  const Matrix p = rng.gaussian_matrix(5, 2, 1.0);
  const NodeId pid = tape.parameter("p", p);
  const GradMap grads = tape.backward(tape.sum_all(tape.square(pid)));
  EXPECT_EQ(grads.at("p"), scale(p, 2.0));
}

TEST(Tape, UnreachableParameterGetsExactZero) {
  Tape tape;
  Rng rng(33);
  const NodeId used = tape.parameter("used", rng.gaussian_matrix(3, 3, 1.0));
  tape.parameter("unused", rng.gaussian_matrix(2, 2, 1.0));
  const GradMap grads = tape.backward(tape.sum_all(used));
  EXPECT_EQ(grads.at("unused"), Matrix(2, 2, 0.0));
}

TEST(Tape, NonScalarLossRejected) {
  Tape tape;
  const NodeId p = tape.parameter("p", Matrix(2, 2, 1.0));
  EXPECT_THROW(tape.backward(p), std::invalid_argument);
}

TEST(Tape, DuplicateParameterRejected) {
  Tape tape;
  tape.parameter("p", Matrix(1, 1, 1.0));
  EXPECT_THROW(tape.parameter("p", Matrix(1, 1, 2.0)), std::invalid_argument);
}

TEST(Tape, MlpCompositeMatchesFiniteDifferences) {
  Rng rng(34);
  std::map<std::string, Matrix> params;
  params["w1"] = rng.gaussian_matrix(6, 4, 0.7);
  params["b1"] = rng.gaussian_matrix(6, 1, 0.5);
  params["w2"] = rng.gaussian_matrix(3, 6, 0.7);
  const Matrix x = rng.gaussian_matrix(4, 5, 1.0);
  const Matrix target = rng.gaussian_matrix(3, 5, 1.0);

  const auto build = [&](Tape& tape, const std::map<std::string, Matrix>& p) {
    const NodeId w1 = tape.parameter("w1", p.at("w1"));
    const NodeId b1 = tape.parameter("b1", p.at("b1"));
    const NodeId w2 = tape.parameter("w2", p.at("w2"));
    const NodeId h = tape.tanh(tape.add_col(tape.matmul(w1, tape.constant(x)), b1));
    const NodeId y = tape.matmul(w2, h);
    const NodeId diff = tape.sub(y, tape.constant(target));
    return tape.scale(tape.sum_all(tape.square(diff)), 1.0 / 15.0);
  };
  const auto check = check_gradients(build, params);
  EXPECT_LE(check.max_rel_error, 1e-5) << "worst " << check.worst_param;
}

TEST(Tape, SoftplusReluHadamardMatchFiniteDifferences) {
  Rng rng(35);
  std::map<std::string, Matrix> params;
  // Offset keeps relu inputs away from its kink.
  Matrix a = rng.gaussian_matrix(4, 4, 1.0);
  for (double& v : a.values()) v += (v >= 0.0 ? 0.5 : -0.5);
  params["a"] = a;
  params["b"] = rng.gaussian_matrix(4, 4, 1.0);

  const auto build = [&](Tape& tape, const std::map<std::string, Matrix>& p) {
    const NodeId pa = tape.parameter("a", p.at("a"));
    const NodeId pb = tape.parameter("b", p.at("b"));
    const NodeId mix = tape.hadamard(tape.relu(pa), tape.softplus(pb));
    return tape.sum_all(tape.sub(mix, tape.scale(pb, 0.25)));
  };
  const auto check = check_gradients(build, params);
  EXPECT_LE(check.max_rel_error, 1e-5) << "worst " << check.worst_param;
}

TEST(Tape, ReductionAndRatioOpsMatchFiniteDifferences) {
  Rng rng(36);
  std::map<std::string, Matrix> params;
  params["s"] = rng.gaussian_matrix(5, 3, 0.8);

  const auto build = [&](Tape& tape, const std::map<std::string, Matrix>& p) {
    const NodeId s = tape.parameter("s", p.at("s"));
    const NodeId s2 = tape.square(s);
    const NodeId totals = tape.col_sum(s2);                 // strictly positive
    const NodeId normalized = tape.colwise_div(s2, totals);
    const NodeId per_row = tape.scale(tape.row_sum(normalized), 0.5);
    const NodeId ratio = tape.div_elem(tape.col_sum(normalized), tape.col_sum(s2));
    return tape.add(tape.sum_all(per_row), tape.sum_all(ratio));
  };
  const auto check = check_gradients(build, params);
  EXPECT_LE(check.max_rel_error, 1e-5) << "worst " << check.worst_param;
}

TEST(Tape, LogSumExpAndSoftmaxMatchFiniteDifferences) {
  Rng rng(37);
  std::map<std::string, Matrix> params;
  params["logits"] = rng.gaussian_matrix(6, 4, 1.5);

  const auto build = [&](Tape& tape, const std::map<std::string, Matrix>& p) {
    const NodeId logits = tape.parameter("logits", p.at("logits"));
    const NodeId lse = tape.logsumexp_cols(logits);
    const NodeId probs = tape.softmax_cols(logits);
    const NodeId row = tape.take_row(probs, 2);
    const NodeId mixed = tape.colwise_mul(tape.square(logits), row);
    return tape.add(tape.sum_all(tape.square(lse)), tape.sum_all(mixed));
  };
  const auto check = check_gradients(build, params);
  EXPECT_LE(check.max_rel_error, 1e-5) << "worst " << check.worst_param;
}

TEST(Tape, LogSumExpOfZerosIsLogN) {
  Tape tape;
  const NodeId z = tape.constant(Matrix(7, 2, 0.0));
  const Matrix lse = tape.value(tape.logsumexp_cols(z));
  EXPECT_NEAR(lse(0, 0), std::log(7.0), 1e-14);
  EXPECT_NEAR(lse(0, 1), std::log(7.0), 1e-14);
}

TEST(Tape, EagerValuesAvailableMidGraph) {
  Tape tape;
  const NodeId p = tape.parameter("p", Matrix(2, 2, 3.0));
  const NodeId doubled = tape.scale(p, 2.0);
  EXPECT_EQ(tape.value(doubled), Matrix(2, 2, 6.0));
}

}  // namespace
