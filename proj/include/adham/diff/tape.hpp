#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation as a node holding its value. Nodes are
// appended in evaluation order, so a reverse sweep over node ids visits each
// node after all of its consumers. Operations whose inputs are all constants
// record no backward closure.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adham/error.hpp"

namespace adham::diff {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix v) { return push(std::move(v), false, {}); }
  Var variable(Matrix v) { return push(std::move(v), true, {}); }
  Var constant_scalar(double s) { return constant(Matrix::Constant(1, 1, s)); }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward root with respect to `v` (zeros if `v`
  /// did not influence the root).
  Matrix grad(Var v) const {
    const auto& n = nodes_[v.id];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Propagates d(root)/d(node) to every node; root must be 1x1.
  void backward(Var root) {
    if (root.rows() != 1 || root.cols() != 1) throw UsageError("backward: root must be a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[root.id].grad = Matrix::Ones(1, 1);
    for (std::size_t id = root.id + 1; id-- > 0;) {
      auto& n = nodes_[id];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
      n.grad.resize(0, 0);
    }
  }

  /// Adds `g` into the gradient slot of `v` if it requires one.
  template <class Expr>
  void accumulate(Var v, const Expr& g) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }
  void accumulate(Var v, Matrix&& g) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = std::move(g);
    else
      n.grad += g;
  }

  using Backward = std::function<void(Tape&, const Matrix&)>;

  /// Records a node. `backward` receives the node's upstream gradient and is
  /// dropped when no input requires a gradient.
  Var push(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix{}, requires_grad ? std::move(backward) : Backward{}, requires_grad});
    return Var{this, nodes_.size() - 1};
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

namespace detail {
inline bool any_grad(std::initializer_list<Var> vs) {
  for (const auto& v : vs)
    if (v.tape->requires_grad(v)) return true;
  return false;
}
inline void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw UsageError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw UsageError("matmul: inner dimensions differ");
  Tape& t = *a.tape;
  Matrix out = a.value() * b.value();
  return t.push(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

/// a + bias, with the 1xk bias broadcast over rows.
inline Var add_row(Var a, Var bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) throw UsageError("add_row: bias shape mismatch");
  Tape& t = *a.tape;
  Matrix out = a.value().rowwise() + bias.value().row(0);
  return t.push(std::move(out), detail::any_grad({a, bias}), [a, bias](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
  });
}

/// a + s with the 1x1 variable s broadcast to every entry.
inline Var add_scalar(Var a, Var s) {
  if (s.rows() != 1 || s.cols() != 1) throw UsageError("add_scalar: expected 1x1");
  Tape& t = *a.tape;
  Matrix out = a.value().array() + s.scalar();
  return t.push(std::move(out), detail::any_grad({a, s}), [a, s](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(s)) t.accumulate(s, Matrix::Constant(1, 1, g.sum()));
  });
}

inline Var add(Var a, Var b) {
  detail::same_shape(a, b, "add");
  Tape& t = *a.tape;
  Matrix out = a.value() + b.value();
  return t.push(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_shape(a, b, "sub");
  Tape& t = *a.tape;
  Matrix out = a.value() - b.value();
  return t.push(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) t.accumulate(b, -g);
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::same_shape(a, b, "mul");
  Tape& t = *a.tape;
  Matrix out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Matrix out = a.value() * s;
  return t.push(std::move(out), detail::any_grad({a}), [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

/// Elementwise product with a constant matrix (dropout masks, weights).
inline Var mul_const(Var a, Matrix m) {
  if (a.rows() != m.rows() || a.cols() != m.cols()) throw UsageError("mul_const: shape mismatch");
  Tape& t = *a.tape;
  Matrix out = a.value().cwiseProduct(m);
  if (!t.requires_grad(a)) return t.constant(std::move(out));
  return t.push(std::move(out), true, [a, m = std::move(m)](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseProduct(m)); });
}

inline Var square(Var a) { return mul(a, a); }

inline Var log(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().array().log().matrix();
  return t.push(std::move(out), detail::any_grad({a}),
                [a](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseQuotient(a.value())); });
}

/// x log x with 0 log 0 = 0; the slope at 0 is taken at the smallest normal double.
inline Var xlogx(Var a) {
  Tape& t = *a.tape;
  const auto safe_log = [](double x) { return std::log(std::max(x, std::numeric_limits<double>::min())); };
  Matrix out = a.value().unaryExpr([&](double x) { return x == 0.0 ? 0.0 : x * std::log(x); });
  return t.push(std::move(out), detail::any_grad({a}), [a, safe_log](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(a.value().unaryExpr([&](double x) { return safe_log(x) + 1.0; })));
  });
}

inline Var exp(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().array().exp().matrix();
  const std::size_t self = t.size();
  return t.push(std::move(out), detail::any_grad({a}), [a, self](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(t.value(Var{&t, self})));
  });
}

/// ELU with alpha = 1.
inline Var elu(Var a) {
  Tape& t = *a.tape;
  const auto& x = a.value().array();
  Matrix out = (x.max(0.0) + (x.min(0.0).exp() - 1.0)).matrix();
  const std::size_t self = t.size();
  return t.push(std::move(out), detail::any_grad({a}), [a, self](Tape& t, const Matrix& g) {
    const auto& y = t.value(Var{&t, self}).array();
    Matrix d = (g.array() * (y.min(0.0) + 1.0)).matrix();
    t.accumulate(a, std::move(d));
  });
}

inline double softplus_value(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::max(std::exp(x), std::numeric_limits<double>::min());  // stays strictly positive
  return std::log1p(std::exp(x));
}

inline double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var softplus(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().unaryExpr([](double x) { return softplus_value(x); });
  return t.push(std::move(out), detail::any_grad({a}), [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(a.value().unaryExpr([](double x) { return sigmoid_value(x); })));
  });
}

/// Row-wise softmax, max-shifted.
inline Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value();
  for (Index r = 0; r < out.rows(); ++r) {
    const double mx = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  const std::size_t self = t.size();
  return t.push(std::move(out), detail::any_grad({a}), [a, self](Tape& t, const Matrix& g) {
    const Matrix& s = t.value(Var{&t, self});
    const Eigen::VectorXd inner = g.cwiseProduct(s).rowwise().sum();
    Matrix d = s.cwiseProduct(g.colwise() - inner);
    t.accumulate(a, d);
  });
}

/// Row-wise layer normalization with a 1xk gain and shift (biased variance).
inline Var layer_norm_rows(Var a, Var gain, Var shift, double eps = 1e-5) {
  const Index k = a.cols();
  if (gain.cols() != k || shift.cols() != k || gain.rows() != 1 || shift.rows() != 1)
    throw UsageError("layer_norm_rows: parameter shape mismatch");
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  const Eigen::VectorXd mu = x.rowwise().mean();
  Matrix xhat = x.colwise() - mu;
  const Eigen::VectorXd inv_sigma =
      ((xhat.array().square().rowwise().sum() / static_cast<double>(k)) + eps).sqrt().inverse().matrix();
  xhat = inv_sigma.asDiagonal() * xhat;
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix().rowwise() + shift.value().row(0);
  return t.push(std::move(out), detail::any_grad({a, gain, shift}),
                [a, gain, shift, xhat = std::move(xhat), inv_sigma, k](Tape& t, const Matrix& g) {
                  if (t.requires_grad(gain)) t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
                  if (t.requires_grad(shift)) t.accumulate(shift, g.colwise().sum());
                  if (t.requires_grad(a)) {
                    const Matrix dxhat = (g.array().rowwise() * gain.value().row(0).array()).matrix();
                    const Eigen::VectorXd m1 = dxhat.rowwise().mean();
                    const Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().sum() / static_cast<double>(k);
                    Matrix dx = dxhat.colwise() - m1;
                    dx -= m2.asDiagonal() * xhat;
                    t.accumulate(a, inv_sigma.asDiagonal() * dx);
                  }
                });
}

/// Sum of all entries, as a 1x1 node.
inline Var sum(Var a) {
  Tape& t = *a.tape;
  return t.push(Matrix::Constant(1, 1, a.value().sum()), detail::any_grad({a}), [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

/// sum(a .* w) for a constant weight matrix of the same shape.
inline Var weighted_sum(Var a, const Matrix& w) {
  if (a.rows() != w.rows() || a.cols() != w.cols()) throw UsageError("weighted_sum: shape mismatch");
  Tape& t = *a.tape;
  return t.push(Matrix::Constant(1, 1, a.value().cwiseProduct(w).sum()), detail::any_grad({a}),
                [a, w](Tape& t, const Matrix& g) { t.accumulate(a, w * g(0, 0)); });
}

/// Column sums as a 1xk row.
inline Var col_sum(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().colwise().sum();
  return t.push(std::move(out), detail::any_grad({a}), [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.replicate(a.rows(), 1));
  });
}

/// Rectangular slice.
inline Var block(Var a, Index r0, Index c0, Index nr, Index nc) {
  if (r0 < 0 || c0 < 0 || r0 + nr > a.rows() || c0 + nc > a.cols()) throw UsageError("block: out of range");
  Tape& t = *a.tape;
  Matrix out = a.value().block(r0, c0, nr, nc);
  return t.push(std::move(out), detail::any_grad({a}), [a, r0, c0, nr, nc](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.block(r0, c0, nr, nc) = g;
    t.accumulate(a, full);
  });
}

/// Column-major reshape.
inline Var reshape(Var a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) throw UsageError("reshape: size mismatch");
  Tape& t = *a.tape;
  Matrix out = a.value().reshaped(rows, cols);
  return t.push(std::move(out), detail::any_grad({a}), [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.reshaped(a.rows(), a.cols()));
  });
}

/// out = sum_d weights(:, d) .* parts[d], where weights is L x D and each
/// part is L x K. This is the covariate-weighted sum of per-covariate hazards.
inline Var mix_columns(Var weights, std::span<const Var> parts) {
  const Index D = weights.cols();
  if (static_cast<Index>(parts.size()) != D || D == 0) throw UsageError("mix_columns: need one part per weight column");
  const Index L = weights.rows();
  const Index K = parts[0].cols();
  Tape& t = *weights.tape;
  Matrix out = Matrix::Zero(L, K);
  bool grad = t.requires_grad(weights);
  for (Index d = 0; d < D; ++d) {
    const Var& p = parts[static_cast<std::size_t>(d)];
    if (p.rows() != L || p.cols() != K) throw UsageError("mix_columns: part shape mismatch");
    out += weights.value().col(d).asDiagonal() * p.value();
    grad = grad || t.requires_grad(p);
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(std::move(out), grad, [weights, ps = std::move(ps)](Tape& t, const Matrix& g) {
    const Index D = weights.cols();
    Matrix dw;
    if (t.requires_grad(weights)) dw.resize(weights.rows(), D);
    for (Index d = 0; d < D; ++d) {
      const Var& p = ps[static_cast<std::size_t>(d)];
      if (t.requires_grad(weights)) dw.col(d) = g.cwiseProduct(p.value()).rowwise().sum();
      if (t.requires_grad(p)) t.accumulate(p, weights.value().col(d).asDiagonal() * g);
    }
    if (t.requires_grad(weights)) t.accumulate(weights, dw);
  });
}

/// Evaluates `loss(tape, params)` and its gradient with respect to every
/// entry of `params`. Throws NumericalError if the value or any gradient
/// entry is non-finite.
template <class LossFn>
std::pair<double, std::vector<Matrix>> value_and_gradient(LossFn&& loss, std::span<const Matrix> params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.variable(p));
  Var out = loss(tape, std::span<const Var>(vars));
  const double value = out.scalar();
  if (!std::isfinite(value)) throw NumericalError("non-finite loss value");
  tape.backward(out);
  std::vector<Matrix> grads;
  grads.reserve(vars.size());
  for (const auto& v : vars) {
    grads.push_back(tape.grad(v));
    if (!grads.back().allFinite()) throw NumericalError("non-finite gradient");
  }
  return {value, std::move(grads)};
}

}  // namespace adham::diff
