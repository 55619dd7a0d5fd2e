// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "lorasp/rng.hpp"
#include "lorasp/svd.hpp"

namespace lorasp {

// Frozen two-layer base network y = w2 * tanh(w1 * x). Both weight
// matrices are adaptation targets.
struct BaseNetwork {
  Matrix w1;  // hidden x d_in
  Matrix w2;  // d_out x hidden

  std::size_t d_in() const { return w1.cols(); }
  std::size_t hidden() const { return w1.rows(); }
  std::size_t d_out() const { return w2.rows(); }
  std::size_t param_count() const { return w1.size() + w2.size(); }

  Matrix forward(const Matrix& x) const { return matmul(w2, tanh_map(matmul(w1, x))); }

  std::vector<std::string> layer_names() const { return {"layer1", "layer2"}; }
  const Matrix& layer_weight(const std::string& name) const {
    if (name == "layer1") return w1;
    if (name == "layer2") return w2;
    throw std::invalid_argument("base network: unknown layer " + name);
  }
};

// A regression task defined by teacher updates of exact planted rank on
// every adapted layer. Inputs carry a one-hot task block in their last
// coordinates so task identity is observable from x.
struct Task {
  std::string name;
  std::size_t planted_rank = 0;
  std::map<std::string, Matrix> teacher_delta;
  Matrix train_x, train_y;
  Matrix val_x, val_y;
};

struct SuiteConfig {
  std::size_t d_in = 64;
  std::size_t hidden = 64;
  std::size_t d_out = 32;
  std::size_t train_samples = 1000;
  std::size_t val_samples = 200;
  double delta_scale = 0.5;  // ||teacher delta||_F relative to the layer weight
  double label_noise = 0.0;  // stddev of Gaussian observation noise on targets
};

struct TaskSuite {
  BaseNetwork base;
  std::vector<Task> tasks;
  SuiteConfig config;
  std::uint64_t seed = 0;

  const Task& task(std::size_t i) const { return tasks.at(i); }
};

namespace detail {

// Exact rank-r update with orthonormal factors and a controlled, mildly
// decaying spectrum, scaled to the requested Frobenius norm. Orthonormal
// bases come from the SVD of Gaussian draws.
inline Matrix planted_update(std::size_t rows, std::size_t cols, std::size_t rank, double target_fro,
                             Rng&& u_rng, Rng&& v_rng) {
  if (rank == 0) return Matrix(rows, cols);
  const Matrix qu = svd(u_rng.gaussian_matrix(rows, rank, 1.0)).u;        // rows x rank
  const Matrix qv = transpose(svd(v_rng.gaussian_matrix(cols, rank, 1.0)).u);  // rank x cols
  std::vector<double> spectrum(rank);
  double norm2 = 0.0;
  for (std::size_t i = 0; i < rank; ++i) {
    spectrum[i] = 1.0 - 0.45 * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(1, rank - 1));
    norm2 += spectrum[i] * spectrum[i];
  }
  const double gain = target_fro / std::sqrt(norm2);
  Matrix scaled = qu;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < rank; ++j) scaled(i, j) *= gain * spectrum[j];
  return matmul(scaled, qv);
}

inline Matrix sample_inputs(std::size_t d_in, std::size_t task_count, std::size_t task_index,
                            std::size_t n, Rng&& rng) {
  if (task_count > d_in) throw std::invalid_argument("make_tasks: more tasks than input dims");
  const std::size_t noise_dims = d_in - task_count;
  Matrix x(d_in, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < noise_dims; ++i) x(i, j) = rng.gaussian();
    x(noise_dims + task_index, j) = 1.0;
  }
  return x;
}

}  // namespace detail

// Builds the synthetic multi-task suite: a frozen base, one teacher per
// planted rank, and Gaussian regression data labeled by the teacher.
inline TaskSuite make_tasks(std::uint64_t seed, const std::vector<std::size_t>& planted_ranks,
                            SuiteConfig config = {}) {
  if (planted_ranks.empty()) throw std::invalid_argument("make_tasks: need at least one task");
  TaskSuite suite;
  suite.config = config;
  suite.seed = seed;
  suite.base.w1 = Rng::stream(seed, "base.w1")
                      .gaussian_matrix(config.hidden, config.d_in, 1.0 / std::sqrt(double(config.d_in)));
  suite.base.w2 = Rng::stream(seed, "base.w2")
                      .gaussian_matrix(config.d_out, config.hidden, 1.0 / std::sqrt(double(config.hidden)));

  for (std::size_t t = 0; t < planted_ranks.size(); ++t) {
    const std::size_t rank = planted_ranks[t];
    Task task;
    task.name = "task" + std::to_string(t);
    task.planted_rank = rank;
    for (const std::string& layer : suite.base.layer_names()) {
      const Matrix& w = suite.base.layer_weight(layer);
      const std::size_t max_rank = std::min(w.rows(), w.cols());
      if (rank > max_rank)
        throw std::invalid_argument("make_tasks: planted rank " + std::to_string(rank) +
                                    " exceeds min dim " + std::to_string(max_rank) + " of " + layer);
      const std::string prefix = task.name + ".delta." + layer;
      task.teacher_delta[layer] = detail::planted_update(
          w.rows(), w.cols(), rank, config.delta_scale * frobenius_norm(w),
          Rng::stream(seed, prefix + ".u"), Rng::stream(seed, prefix + ".v"));
    }

    const Matrix w1t = add(suite.base.w1, task.teacher_delta.at("layer1"));
    const Matrix w2t = add(suite.base.w2, task.teacher_delta.at("layer2"));
    const auto teacher = [&](const Matrix& x) { return matmul(w2t, tanh_map(matmul(w1t, x))); };

    task.train_x = detail::sample_inputs(config.d_in, planted_ranks.size(), t, config.train_samples,
                                         Rng::stream(seed, task.name + ".train.x"));
    task.train_y = teacher(task.train_x);
    task.val_x = detail::sample_inputs(config.d_in, planted_ranks.size(), t, config.val_samples,
                                       Rng::stream(seed, task.name + ".val.x"));
    task.val_y = teacher(task.val_x);
    if (config.label_noise > 0.0) {
      Rng train_noise = Rng::stream(seed, task.name + ".noise.train");
      Rng val_noise = Rng::stream(seed, task.name + ".noise.val");
      for (double& v : task.train_y.values()) v += config.label_noise * train_noise.gaussian();
      for (double& v : task.val_y.values()) v += config.label_noise * val_noise.gaussian();
    }
    suite.tasks.push_back(std::move(task));
  }
  return suite;
}

inline double mse(const Matrix& predicted, const Matrix& target) {
  const Matrix diff = sub(predicted, target);
  double s = 0.0;
  for (double v : diff.values()) s += v * v;
  return s / static_cast<double>(diff.size());
}

// Validation loss of the frozen base with no adapter; the scale reference
// for intrinsic-dimension tolerances.
inline double base_val_loss(const TaskSuite& suite, std::size_t task_index) {
  const Task& task = suite.task(task_index);
  return mse(suite.base.forward(task.val_x), task.val_y);
}

}  // namespace lorasp
