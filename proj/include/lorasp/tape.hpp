// Copyright (c) 2026 lorasp contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lorasp/matrix.hpp"

namespace lorasp {

using NodeId = std::uint32_t;
using GradMap = std::map<std::string, Matrix>;

// Reverse-mode tape over matrix-level primitives. Values are computed
// eagerly as nodes are appended, so callers can branch on intermediate
// results (the energy gate does) while the graph stays differentiable.
// Nodes are append-only and inputs always precede their consumers; the
// backward pass walks the list once in reverse.
class Tape {
 public:
  enum class Op : std::uint8_t {
    Param,
    Constant,
    MatMul,
    Add,
    Sub,
    AddColBroadcast,
    Hadamard,
    Scale,
    Relu,
    TanhOp,
    Softplus,
    Square,
    SumAll,
    ColSum,
    RowSum,
    DivElem,
    ColwiseMul,
    ColwiseDiv,
    LogSumExpCols,
    SoftmaxCols,
    TakeRow,
  };

  NodeId parameter(const std::string& name, Matrix value) {
    if (param_ids_.count(name))
      throw std::invalid_argument("tape: duplicate parameter '" + name + "'");
    const NodeId id = push(Op::Param, kNone, kNone, std::move(value));
    param_ids_[name] = id;
    return id;
  }

  NodeId constant(Matrix value) { return push(Op::Constant, kNone, kNone, std::move(value)); }

  NodeId constant_scalar(double v) { return constant(Matrix(1, 1, v)); }

  NodeId matmul(NodeId a, NodeId b) { return push(Op::MatMul, a, b, lorasp::matmul(val(a), val(b))); }

  NodeId add(NodeId a, NodeId b) { return push(Op::Add, a, b, lorasp::add(val(a), val(b))); }

  NodeId sub(NodeId a, NodeId b) { return push(Op::Sub, a, b, lorasp::sub(val(a), val(b))); }

  NodeId add_col(NodeId a, NodeId bias) {
    return push(Op::AddColBroadcast, a, bias, add_col_broadcast(val(a), val(bias)));
  }

  NodeId hadamard(NodeId a, NodeId b) {
    return push(Op::Hadamard, a, b, lorasp::hadamard(val(a), val(b)));
  }

  NodeId scale(NodeId a, double c) {
    NodeId id = push(Op::Scale, a, kNone, lorasp::scale(val(a), c));
    nodes_[id].scalar = c;
    return id;
  }

  NodeId relu(NodeId a) { return push(Op::Relu, a, kNone, lorasp::relu(val(a))); }

  NodeId tanh(NodeId a) { return push(Op::TanhOp, a, kNone, tanh_map(val(a))); }

  NodeId softplus(NodeId a) { return push(Op::Softplus, a, kNone, lorasp::softplus(val(a))); }

  NodeId square(NodeId a) { return push(Op::Square, a, kNone, lorasp::hadamard(val(a), val(a))); }

  NodeId sum_all(NodeId a) {
    double s = 0.0;
    for (double v : val(a).values()) s += v;
    return push(Op::SumAll, a, kNone, Matrix(1, 1, s));
  }

  // 1 x n row of per-column sums.
  NodeId col_sum(NodeId a) {
    const Matrix& m = val(a);
    Matrix out(1, m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j) out(0, j) += m(i, j);
    return push(Op::ColSum, a, kNone, std::move(out));
  }

  // m x 1 column of per-row sums.
  NodeId row_sum(NodeId a) {
    const Matrix& m = val(a);
    Matrix out(m.rows(), 1);
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j) out(i, 0) += m(i, j);
    return push(Op::RowSum, a, kNone, std::move(out));
  }

  NodeId div_elem(NodeId a, NodeId b) {
    const Matrix& x = val(a);
    const Matrix& y = val(b);
    if (!x.same_shape(y))
      throw std::invalid_argument("div_elem: shape mismatch, " + shape_str(x) + " vs " + shape_str(y));
    Matrix out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] /= y.data()[i];
    ensure_finite(out, "div_elem");
    return push(Op::DivElem, a, b, std::move(out));
  }

  // C(i,j) = a(i,j) * row(0,j); `row` is 1 x cols(a).
  NodeId colwise_mul(NodeId a, NodeId row) {
    return push(Op::ColwiseMul, a, row, colwise_combine(val(a), val(row), false));
  }

  NodeId colwise_div(NodeId a, NodeId row) {
    return push(Op::ColwiseDiv, a, row, colwise_combine(val(a), val(row), true));
  }

  // 1 x n row: log(sum_i exp(a(i,j))), max-shifted for stability.
  NodeId logsumexp_cols(NodeId a) {
    const Matrix& m = val(a);
    Matrix out(1, m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) out(0, j) = lse_column(m, j);
    return push(Op::LogSumExpCols, a, kNone, std::move(out));
  }

  NodeId softmax_cols(NodeId a) {
    const Matrix& m = val(a);
    Matrix out(m.rows(), m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const double lse = lse_column(m, j);
      for (std::size_t i = 0; i < m.rows(); ++i) out(i, j) = std::exp(m(i, j) - lse);
    }
    return push(Op::SoftmaxCols, a, kNone, std::move(out));
  }

  NodeId take_row(NodeId a, std::size_t row) {
    const Matrix& m = val(a);
    if (row >= m.rows()) throw std::invalid_argument("take_row: row out of range");
    Matrix out(1, m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) out(0, j) = m(row, j);
    NodeId id = push(Op::TakeRow, a, kNone, std::move(out));
    nodes_[id].aux = static_cast<std::uint32_t>(row);
    return id;
  }

  const Matrix& value(NodeId id) const { return nodes_[id].value; }

  double scalar_value(NodeId id) const {
    const Matrix& m = nodes_[id].value;
    if (m.rows() != 1 || m.cols() != 1)
      throw std::invalid_argument("scalar_value: node is " + shape_str(m) + ", not 1x1");
    return m(0, 0);
  }

  std::size_t node_count() const { return nodes_.size(); }

  // Gradient of a scalar loss with respect to every named parameter.
  // Parameters the loss does not reach get exact-zero gradients.
  GradMap backward(NodeId loss) const {
    const Matrix& lv = val(loss);
    if (lv.rows() != 1 || lv.cols() != 1)
      throw std::invalid_argument("backward: loss node must be scalar, got " + shape_str(lv));

    std::vector<Matrix> adj(nodes_.size());
    adj[loss] = Matrix(1, 1, 1.0);

    const auto acc = [&](NodeId id, std::size_t i, std::size_t j, double g) {
      if (adj[id].empty()) adj[id] = Matrix(nodes_[id].value.rows(), nodes_[id].value.cols());
      adj[id](i, j) += g;
    };
    const auto acc_matrix = [&](NodeId id, const Matrix& g) {
      if (adj[id].empty()) {
        adj[id] = g;
        return;
      }
      for (std::size_t i = 0; i < g.size(); ++i) adj[id].data()[i] += g.data()[i];
    };

    for (std::size_t idx = loss + 1; idx-- > 0;) {
      const Node& node = nodes_[idx];
      if (adj[idx].empty()) continue;
      const Matrix& g = adj[idx];
      switch (node.op) {
        case Op::Param:
        case Op::Constant:
          break;
        case Op::MatMul:
          acc_matrix(node.a, lorasp::matmul(g, transpose(val(node.b))));
          acc_matrix(node.b, lorasp::matmul(transpose(val(node.a)), g));
          break;
        case Op::Add:
          acc_matrix(node.a, g);
          acc_matrix(node.b, g);
          break;
        case Op::Sub:
          acc_matrix(node.a, g);
          acc_matrix(node.b, lorasp::scale(g, -1.0));
          break;
        case Op::AddColBroadcast: {
          acc_matrix(node.a, g);
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) acc(node.b, i, 0, g(i, j));
          break;
        }
        case Op::Hadamard:
          acc_matrix(node.a, lorasp::hadamard(g, val(node.b)));
          acc_matrix(node.b, lorasp::hadamard(g, val(node.a)));
          break;
        case Op::Scale:
          acc_matrix(node.a, lorasp::scale(g, node.scalar));
          break;
        case Op::Relu: {
          const Matrix& x = val(node.a);
          Matrix d = g;
          for (std::size_t i = 0; i < d.size(); ++i)
            if (x.data()[i] <= 0.0) d.data()[i] = 0.0;
          acc_matrix(node.a, d);
          break;
        }
        case Op::TanhOp: {
          Matrix d = g;
          const Matrix& y = node.value;
          for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] *= 1.0 - y.data()[i] * y.data()[i];
          acc_matrix(node.a, d);
          break;
        }
        case Op::Softplus: {
          const Matrix& x = val(node.a);
          Matrix d = g;
          for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] *= sigmoid(x.data()[i]);
          acc_matrix(node.a, d);
          break;
        }
        case Op::Square: {
          const Matrix& x = val(node.a);
          Matrix d = g;
          for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] *= 2.0 * x.data()[i];
          acc_matrix(node.a, d);
          break;
        }
        case Op::SumAll: {
          const double gv = g(0, 0);
          const Matrix& x = val(node.a);
          acc_matrix(node.a, Matrix(x.rows(), x.cols(), gv));
          break;
        }
        case Op::ColSum: {
          const Matrix& x = val(node.a);
          Matrix d(x.rows(), x.cols());
          for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) d(i, j) = g(0, j);
          acc_matrix(node.a, d);
          break;
        }
        case Op::RowSum: {
          const Matrix& x = val(node.a);
          Matrix d(x.rows(), x.cols());
          for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) d(i, j) = g(i, 0);
          acc_matrix(node.a, d);
          break;
        }
        case Op::DivElem: {
          const Matrix& y = val(node.b);
          const Matrix& c = node.value;
          Matrix da = g;
          Matrix db = g;
          for (std::size_t i = 0; i < da.size(); ++i) {
            da.data()[i] /= y.data()[i];
            db.data()[i] *= -c.data()[i] / y.data()[i];
          }
          acc_matrix(node.a, da);
          acc_matrix(node.b, db);
          break;
        }
        case Op::ColwiseMul: {
          const Matrix& x = val(node.a);
          const Matrix& r = val(node.b);
          Matrix da = g;
          for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) {
              da(i, j) *= r(0, j);
              acc(node.b, 0, j, g(i, j) * x(i, j));
            }
          acc_matrix(node.a, da);
          break;
        }
        case Op::ColwiseDiv: {
          const Matrix& r = val(node.b);
          const Matrix& c = node.value;
          Matrix da = g;
          for (std::size_t i = 0; i < da.rows(); ++i)
            for (std::size_t j = 0; j < da.cols(); ++j) {
              da(i, j) /= r(0, j);
              acc(node.b, 0, j, -g(i, j) * c(i, j) / r(0, j));
            }
          acc_matrix(node.a, da);
          break;
        }
        case Op::LogSumExpCols: {
          const Matrix& x = val(node.a);
          Matrix d(x.rows(), x.cols());
          for (std::size_t j = 0; j < x.cols(); ++j) {
            const double lse = node.value(0, j);
            for (std::size_t i = 0; i < x.rows(); ++i)
              d(i, j) = g(0, j) * std::exp(x(i, j) - lse);
          }
          acc_matrix(node.a, d);
          break;
        }
        case Op::SoftmaxCols: {
          const Matrix& s = node.value;
          Matrix d(s.rows(), s.cols());
          for (std::size_t j = 0; j < s.cols(); ++j) {
            double dot = 0.0;
            for (std::size_t i = 0; i < s.rows(); ++i) dot += s(i, j) * g(i, j);
            for (std::size_t i = 0; i < s.rows(); ++i) d(i, j) = s(i, j) * (g(i, j) - dot);
          }
          acc_matrix(node.a, d);
          break;
        }
        case Op::TakeRow: {
          const Matrix& x = val(node.a);
          Matrix d(x.rows(), x.cols());
          for (std::size_t j = 0; j < x.cols(); ++j) d(node.aux, j) = g(0, j);
          acc_matrix(node.a, d);
          break;
        }
      }
    }

    GradMap grads;
    for (const auto& [name, id] : param_ids_) {
      if (adj[id].empty()) {
        grads[name] = Matrix(nodes_[id].value.rows(), nodes_[id].value.cols());
      } else {
        ensure_finite(adj[id], "backward");
        grads[name] = std::move(adj[id]);
      }
    }
    return grads;
  }

 private:
  static constexpr NodeId kNone = 0xffffffff;

  struct Node {
    Op op;
    NodeId a;
    NodeId b;
    std::uint32_t aux = 0;
    double scalar = 0.0;
    Matrix value;
  };

  const Matrix& val(NodeId id) const { return nodes_[id].value; }

  NodeId push(Op op, NodeId a, NodeId b, Matrix value) {
    nodes_.push_back(Node{op, a, b, 0, 0.0, std::move(value)});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  static Matrix colwise_combine(const Matrix& a, const Matrix& row, bool divide) {
    if (row.rows() != 1 || row.cols() != a.cols())
      throw std::invalid_argument("colwise op: row must be 1x" + std::to_string(a.cols()) +
                                  ", got " + shape_str(row));
    Matrix out = a;
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j)
        out(i, j) = divide ? out(i, j) / row(0, j) : out(i, j) * row(0, j);
    ensure_finite(out, divide ? "colwise_div" : "colwise_mul");
    return out;
  }

  static double lse_column(const Matrix& m, std::size_t j) {
    double mx = m(0, j);
    for (std::size_t i = 1; i < m.rows(); ++i) mx = std::max(mx, m(i, j));
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) s += std::exp(m(i, j) - mx);
    return mx + std::log(s);
  }

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> param_ids_;
};

}  // namespace lorasp
