#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records every op of one forward pass. backward() walks it in
// reverse, accumulating gradients only into nodes that (transitively) depend
// on a leaf created with requires_grad. Rows are sequence positions.

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "common.hpp"

namespace argpersona {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using TokenId = std::int32_t;

class Tape;

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  Tape() { nodes_.reserve(256); }

  Var constant(Matrix value) { return push(std::move(value), false, {}); }
  Var leaf(Matrix value, bool requires_grad) { return push(std::move(value), requires_grad, {}); }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // ---- ops -------------------------------------------------------------

  Var matmul(Var a, Var b) {
    Matrix out = value(a) * value(b);
    return push(std::move(out), any_grad(a, b), [this, a, b](const Matrix& g) {
      if (requires_grad(a)) acc(a, g * value(b).transpose());
      if (requires_grad(b)) acc(b, value(a).transpose() * g);
    });
  }

  // a * b^T
  Var matmul_bt(Var a, Var b) {
    Matrix out = value(a) * value(b).transpose();
    return push(std::move(out), any_grad(a, b), [this, a, b](const Matrix& g) {
      if (requires_grad(a)) acc(a, g * value(b));
      if (requires_grad(b)) acc(b, g.transpose() * value(a));
    });
  }

  Var add(Var a, Var b) {
    Matrix out = value(a) + value(b);
    return push(std::move(out), any_grad(a, b), [this, a, b](const Matrix& g) {
      if (requires_grad(a)) acc(a, g);
      if (requires_grad(b)) acc(b, g);
    });
  }

  // Adds the 1 x n row `b` to every row of `a`.
  Var add_row(Var a, Var b) {
    Matrix out = value(a).rowwise() + value(b).row(0);
    return push(std::move(out), any_grad(a, b), [this, a, b](const Matrix& g) {
      if (requires_grad(a)) acc(a, g);
      if (requires_grad(b)) acc(b, g.colwise().sum());
    });
  }

  Var scale(Var a, double s) {
    Matrix out = value(a) * s;
    return push(std::move(out), requires_grad(a), [this, a, s](const Matrix& g) { acc(a, g * s); });
  }

  Var tanh(Var a) {
    Matrix out = value(a).array().tanh().matrix();
    const std::size_t id = nodes_.size();
    return push(std::move(out), requires_grad(a), [this, a, id](const Matrix& g) {
      const auto& y = nodes_[id].value;
      acc(a, (g.array() * (1.0 - y.array().square())).matrix());
    });
  }

  Var concat_rows(Var a, Var b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    if (va.cols() != vb.cols()) throw ContractError("concat_rows: column mismatch");
    Matrix out(va.rows() + vb.rows(), va.cols());
    out.topRows(va.rows()) = va;
    out.bottomRows(vb.rows()) = vb;
    const auto ra = va.rows(), rb = vb.rows();
    return push(std::move(out), any_grad(a, b), [this, a, b, ra, rb](const Matrix& g) {
      if (requires_grad(a)) acc(a, g.topRows(ra));
      if (requires_grad(b)) acc(b, g.bottomRows(rb));
    });
  }

  // Row-wise softmax; with `causal`, entry (i, j) is masked when j > i + offset.
  Var softmax_rows(Var a, bool causal = false, Eigen::Index offset = 0) {
    Matrix out = value(a);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const Eigen::Index visible = causal ? std::min<Eigen::Index>(out.cols(), i + offset + 1) : out.cols();
      const double m = out.row(i).head(visible).maxCoeff();
      double z = 0.0;
      for (Eigen::Index j = 0; j < out.cols(); ++j) {
        if (j < visible) {
          out(i, j) = std::exp(out(i, j) - m);
          z += out(i, j);
        } else {
          out(i, j) = 0.0;
        }
      }
      out.row(i) /= z;
    }
    const std::size_t id = nodes_.size();
    return push(std::move(out), requires_grad(a), [this, a, id](const Matrix& g) {
      const auto& y = nodes_[id].value;
      const Eigen::VectorXd dots = (g.array() * y.array()).rowwise().sum();
      Matrix d = y.array() * (g.array().colwise() - dots.array());
      acc(a, d);
    });
  }

  // sum_t log softmax(logits_t)[targets_t]; a 1 x 1 node.
  Var log_softmax_pick(Var logits, std::span<const TokenId> targets) {
    const auto& z = value(logits);
    if (static_cast<std::size_t>(z.rows()) != targets.size()) throw ContractError("log_softmax_pick: row mismatch");
    Matrix probs(z.rows(), z.cols());
    double total = 0.0;
    for (Eigen::Index t = 0; t < z.rows(); ++t) {
      const double m = z.row(t).maxCoeff();
      const double lse = m + std::log((z.row(t).array() - m).exp().sum());
      probs.row(t) = (z.row(t).array() - lse).exp().matrix();
      total += z(t, targets[static_cast<std::size_t>(t)]) - lse;
    }
    Matrix out(1, 1);
    out(0, 0) = total;
    std::vector<TokenId> tgt(targets.begin(), targets.end());
    return push(std::move(out), requires_grad(logits),
                [this, logits, probs = std::move(probs), tgt = std::move(tgt)](const Matrix& g) {
                  Matrix d = -probs * g(0, 0);
                  for (std::size_t t = 0; t < tgt.size(); ++t) d(static_cast<Eigen::Index>(t), tgt[t]) += g(0, 0);
                  acc(logits, d);
                });
  }

  // Rows of `table` selected by `ids`. Gradients go to `table_grad` (when
  // non-null) during backward; the table itself is not copied onto the tape.
  Var gather_rows(const Matrix& table, std::span<const TokenId> ids, Matrix* table_grad) {
    Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
    if (!table_grad) return constant(std::move(out));
    std::vector<TokenId> idv(ids.begin(), ids.end());
    return push(std::move(out), true, [table_grad, idv = std::move(idv)](const Matrix& g) {
      for (std::size_t i = 0; i < idv.size(); ++i) table_grad->row(idv[i]) += g.row(static_cast<Eigen::Index>(i));
    });
  }

  // ---- backward ---------------------------------------------------------

  // Seeds d(root)/d(root) = 1 and propagates to every grad-requiring node.
  void backward(Var root) {
    auto& r = nodes_[root.id];
    if (r.value.size() != 1) throw ContractError("backward root must be a scalar");
    if (!r.requires_grad) return;
    r.grad = Matrix::Ones(1, 1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(n.grad);
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::function<void(const Matrix&)> backward;
  };

  bool any_grad(Var a, Var b) const { return requires_grad(a) || requires_grad(b); }

  Var push(Matrix value, bool requires_grad, std::function<void(const Matrix&)> backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, requires_grad ? std::move(backward) : nullptr});
    return Var{nodes_.size() - 1};
  }

  template <class Derived>
  void acc(Var v, const Eigen::MatrixBase<Derived>& g) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  std::vector<Node> nodes_;
};

}  // namespace argpersona
