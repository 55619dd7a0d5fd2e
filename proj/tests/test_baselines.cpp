// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "lorasp/baselines.hpp"
#include "lorasp/svd.hpp"
#include "test_helpers.hpp"

using namespace lorasp;
using lorasp::testutil::check_gradients;

namespace {

TEST(Lora, ZeroBMeansBaseOutput) {
  Rng rng(81);
  const LoraAdapter adapter = init_lora(6, 4, 3, 5);
  const Matrix w0 = rng.gaussian_matrix(4, 6, 1.0);
  const Matrix x = rng.gaussian_matrix(6, 1, 1.0);
  EXPECT_EQ(lora_forward(x, w0, adapter), matmul(w0, x));
}

TEST(Lora, SvdFactorizationReproducesTargetUpdate) {
  Rng rng(82);
  const std::size_t d_out = 6, d_in = 8, r = 6;  // r = min dims
  const Matrix target = rng.gaussian_matrix(d_out, d_in, 1.0);
  const SvdResult s = svd(target);
  LoraAdapter adapter;
  adapter.rank = r;
  adapter.a = s.vt;
  adapter.b = s.u;
  for (std::size_t i = 0; i < d_out; ++i)
    for (std::size_t j = 0; j < r; ++j) adapter.b(i, j) *= s.sigma[j];
  const Matrix w0 = rng.gaussian_matrix(d_out, d_in, 1.0);
  const Matrix x = rng.gaussian_matrix(d_in, 1, 1.0);
  const Matrix expected = matmul(add(w0, target), x);
  EXPECT_LE(max_abs_diff(lora_forward(x, w0, adapter), expected), 1e-10);
}

TEST(Lora, MatchesMaterializedUpdate) {
  Rng rng(83);
  for (int trial = 0; trial < 50; ++trial) {
    LoraAdapter adapter = init_lora(7, 5, 3, trial);
    adapter.b = rng.gaussian_matrix(5, 3, 1.0);
    adapter.scaling = 0.5;
    const Matrix w0 = rng.gaussian_matrix(5, 7, 1.0);
    const Matrix x = rng.gaussian_matrix(7, 1, 1.0);
    const Matrix materialized = add(w0, scale(matmul(adapter.b, adapter.a), adapter.scaling));
    EXPECT_LE(max_abs_diff(lora_forward(x, w0, adapter), matmul(materialized, x)), 1e-12);
  }
}

TEST(Lora, ParamCountFormula) {
  const LoraAdapter adapter = init_lora(30, 20, 4, 1);
  EXPECT_EQ(adapter.a.size() + adapter.b.size(), lora_param_count(4, 30, 20));
  EXPECT_EQ(lora_param_count(4, 30, 20), 4u * (30 + 20));
}

TEST(Moe, SingleExpertEqualsPlainLora) {
  Rng rng(84);
  const Matrix w0 = rng.gaussian_matrix(5, 6, 1.0);
  const Matrix x = rng.gaussian_matrix(6, 1, 1.0);
  for (MoeMode mode : {MoeMode::Hard, MoeMode::Soft}) {
    MoeAdapter moe = init_moe(6, 5, 1, 3, mode, 9);
    moe.experts[0].b = rng.gaussian_matrix(5, 3, 1.0);
    EXPECT_LE(max_abs_diff(moe_forward(x, w0, moe), lora_forward(x, w0, moe.experts[0])), 1e-15);
  }
}

TEST(Moe, HardModeAppliesArgmaxExpertOnly) {
  Rng rng(85);
  MoeAdapter moe = init_moe(4, 3, 2, 2, MoeMode::Hard, 11);
  // Zero the gate except b2 so the logits are exactly (5, 1).
  moe.gate.w1 = Matrix(moe.gate.hidden_dim, 4);
  moe.gate.w2 = Matrix(2, moe.gate.hidden_dim);
  moe.gate.b2 = Matrix::column({5.0, 1.0});
  moe.experts[0].b = rng.gaussian_matrix(3, 2, 1.0);
  moe.experts[1].b = rng.gaussian_matrix(3, 2, 1.0);
  const Matrix w0 = rng.gaussian_matrix(3, 4, 1.0);
  const Matrix x = rng.gaussian_matrix(4, 1, 1.0);
  EXPECT_EQ(moe_forward(x, w0, moe), lora_forward(x, w0, moe.experts[0]));
}

TEST(Moe, ArgmaxTiesPickLowestIndex) {
  const Matrix tied = Matrix::column({2.0, 2.0, 1.0});
  EXPECT_EQ(argmax_index(tied), 0u);
}

TEST(Moe, SoftWeightsSumToOne) {
  Rng rng(86);
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<double> g = softmax_column(rng.gaussian_matrix(5, 1, 3.0));
    double total = 0.0;
    for (double v : g) total += v;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Moe, SoftUniformLogitsAverageExperts) {
  Rng rng(87);
  MoeAdapter moe = init_moe(5, 4, 3, 2, MoeMode::Soft, 13);
  moe.gate.w1 = Matrix(moe.gate.hidden_dim, 5);
  moe.gate.w2 = Matrix(3, moe.gate.hidden_dim);
  for (auto& expert : moe.experts) expert.b = rng.gaussian_matrix(4, 2, 1.0);
  const Matrix w0 = rng.gaussian_matrix(4, 5, 1.0);
  const Matrix x = rng.gaussian_matrix(5, 1, 1.0);
  Matrix mean_delta(4, 1);
  for (const auto& expert : moe.experts)
    mean_delta = add(mean_delta, scale(matmul(expert.b, matmul(expert.a, x)), 1.0 / 3.0));
  EXPECT_LE(max_abs_diff(moe_forward(x, w0, moe), add(matmul(w0, x), mean_delta)), 1e-12);
}

TEST(Moe, HardModeInvariantToLogitShift) {
  Rng rng(88);
  MoeAdapter moe = init_moe(6, 4, 3, 2, MoeMode::Hard, 17);
  for (auto& expert : moe.experts) expert.b = rng.gaussian_matrix(4, 2, 1.0);
  const Matrix w0 = rng.gaussian_matrix(4, 6, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = rng.gaussian_matrix(6, 1, 1.0);
    const Matrix before = moe_forward(x, w0, moe);
    MoeAdapter shifted = moe;
    for (double& v : shifted.gate.b2.values()) v += 7.25;
    EXPECT_EQ(moe_forward(x, w0, shifted), before);
  }
}

TEST(Moe, ParamCountFormula) {
  const MoeAdapter moe = init_moe(30, 20, 4, 8, MoeMode::Hard, 3, "moe", 16);
  std::size_t actual = moe.gate.w1.size() + moe.gate.b1.size() + moe.gate.w2.size() + moe.gate.b2.size();
  for (const auto& expert : moe.experts) actual += expert.a.size() + expert.b.size();
  EXPECT_EQ(actual, moe_param_count(4, 8, 30, 20, 16));
  EXPECT_EQ(moe_param_count(4, 8, 30, 20, 16), 4u * 8 * 50 + 16 * 30 + 16 + 4 * 16 + 4);
}

TEST(Moe, SoftGraphGradientsMatchFiniteDifferences) {
  Rng rng(89);
  MoeAdapter moe = init_moe(4, 3, 2, 2, MoeMode::Soft, 19);
  for (auto& expert : moe.experts) expert.b = rng.gaussian_matrix(3, 2, 0.7);
  const Matrix x = rng.gaussian_matrix(4, 3, 1.0);

  std::map<std::string, Matrix> params = {
      {"m.expert0.a", moe.experts[0].a}, {"m.expert0.b", moe.experts[0].b},
      {"m.expert1.a", moe.experts[1].a}, {"m.expert1.b", moe.experts[1].b},
      {"m.gate.w1", moe.gate.w1},        {"m.gate.b1", moe.gate.b1},
      {"m.gate.w2", moe.gate.w2},        {"m.gate.b2", moe.gate.b2}};
  const auto build = [&](Tape& tape, const std::map<std::string, Matrix>& p) {
    MoeParamIds ids;
    ids.experts.push_back({tape.parameter("m.expert0.a", p.at("m.expert0.a")),
                           tape.parameter("m.expert0.b", p.at("m.expert0.b"))});
    ids.experts.push_back({tape.parameter("m.expert1.a", p.at("m.expert1.a")),
                           tape.parameter("m.expert1.b", p.at("m.expert1.b"))});
    ids.gate_w1 = tape.parameter("m.gate.w1", p.at("m.gate.w1"));
    ids.gate_b1 = tape.parameter("m.gate.b1", p.at("m.gate.b1"));
    ids.gate_w2 = tape.parameter("m.gate.w2", p.at("m.gate.w2"));
    ids.gate_b2 = tape.parameter("m.gate.b2", p.at("m.gate.b2"));
    const MoeGraph g = moe_delta_graph(tape, ids, tape.constant(x), MoeMode::Soft, {1.0, 1.0});
    const NodeId reg = moe_reg_graph(tape, g, 2);
    return tape.add(tape.sum_all(tape.square(g.delta)), tape.scale(reg, 0.001));
  };
  const auto check = check_gradients(build, params);
  EXPECT_LE(check.max_rel_error, 1e-5) << "worst " << check.worst_param;
}

TEST(Moe, HardGraphRoutesGradientsToSelectedExpertsOnly) {
  Rng rng(90);
  MoeAdapter moe = init_moe(4, 3, 2, 2, MoeMode::Hard, 23);
  // Force every input to expert 1.
  moe.gate.w1 = Matrix(moe.gate.hidden_dim, 4);
  moe.gate.w2 = Matrix(2, moe.gate.hidden_dim);
  moe.gate.b2 = Matrix::column({0.0, 4.0});
  for (auto& expert : moe.experts) expert.b = rng.gaussian_matrix(3, 2, 0.7);
  const Matrix x = rng.gaussian_matrix(4, 5, 1.0);

  Tape tape;
  MoeParamIds ids = add_moe_parameters(tape, "m", moe);
  const MoeGraph g = moe_delta_graph(tape, ids, tape.constant(x), MoeMode::Hard, {1.0, 1.0});
  const GradMap grads = tape.backward(tape.sum_all(tape.square(g.delta)));
  EXPECT_EQ(grads.at("m.expert0.a"), Matrix(2, 4));
  EXPECT_EQ(grads.at("m.expert0.b"), Matrix(3, 2));
  EXPECT_GT(testutil::max_abs(grads.at("m.expert1.a")), 0.0);
  // Task gradient does not reach the gate in hard mode.
  EXPECT_EQ(grads.at("m.gate.w1"), Matrix(moe.gate.hidden_dim, 4));
  EXPECT_EQ(grads.at("m.gate.b2"), Matrix(2, 1));
}

}  // namespace
