#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "adham/diff/tape.hpp"
#include "adham/error.hpp"
#include "adham/rng.hpp"

namespace adham::diff {

enum class Head { linear, softplus, softmax };

inline const char* to_string(Head h) {
  switch (h) {
    case Head::linear: return "linear";
    case Head::softplus: return "softplus";
    case Head::softmax: return "softmax";
  }
  return "?";
}

inline Head head_from_string(const std::string& s) {
  if (s == "linear") return Head::linear;
  if (s == "softplus") return Head::softplus;
  if (s == "softmax") return Head::softmax;
  throw DataError("unknown head '" + s + "'");
}

/// input -> [linear -> layer norm -> ELU -> dropout] x depth -> linear -> head.
struct Architecture {
  int input = 1;
  int hidden = 100;
  int depth = 3;
  int output = 1;
  Head head = Head::linear;
  bool layer_norm = true;
  bool add_const = false;  // extra learnable scalar added to the head's pre-activation

  bool operator==(const Architecture&) const = default;
};

/// Parameters of one feed-forward network, stored as a flat tensor list:
/// per hidden layer W (in x h), b (1 x h) and, with layer norm, gain and
/// shift (1 x h); then the head W, b; then the optional 1x1 constant.
struct NetworkParams {
  Architecture arch;
  std::vector<Matrix> tensors;

  std::size_t per_layer() const { return arch.layer_norm ? 4 : 2; }
  std::size_t head_index() const { return static_cast<std::size_t>(arch.depth) * per_layer(); }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
    return n;
  }
};

inline std::size_t expected_tensor_count(const Architecture& a) {
  return static_cast<std::size_t>(a.depth) * (a.layer_norm ? 4 : 2) + 2 + (a.add_const ? 1 : 0);
}

inline void check_shapes(const NetworkParams& p) {
  const auto& a = p.arch;
  if (a.input < 1 || a.output < 1 || a.depth < 0 || (a.depth > 0 && a.hidden < 1))
    throw DataError("invalid network architecture");
  if (p.tensors.size() != expected_tensor_count(a)) throw DataError("network tensor count does not match architecture");
  Index in = a.input;
  std::size_t k = 0;
  const auto expect = [&](Index r, Index c) {
    const auto& m = p.tensors[k++];
    if (m.rows() != r || m.cols() != c) throw DataError("network tensor " + std::to_string(k - 1) + " has wrong shape");
  };
  for (int l = 0; l < a.depth; ++l) {
    expect(in, a.hidden);
    expect(1, a.hidden);
    if (a.layer_norm) {
      expect(1, a.hidden);
      expect(1, a.hidden);
    }
    in = a.hidden;
  }
  expect(in, a.output);
  expect(1, a.output);
  if (a.add_const) expect(1, 1);
}

/// Weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases and shifts 0; gains 1.
inline NetworkParams init_network(const Architecture& a, Rng& rng) {
  NetworkParams p{a, {}};
  const auto uniform_matrix = [&](Index r, Index c) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(r));
    Matrix m(r, c);
    for (Index j = 0; j < c; ++j)
      for (Index i = 0; i < r; ++i) m(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
    return m;
  };
  Index in = a.input;
  for (int l = 0; l < a.depth; ++l) {
    p.tensors.push_back(uniform_matrix(in, a.hidden));
    p.tensors.push_back(Matrix::Zero(1, a.hidden));
    if (a.layer_norm) {
      p.tensors.push_back(Matrix::Ones(1, a.hidden));
      p.tensors.push_back(Matrix::Zero(1, a.hidden));
    }
    in = a.hidden;
  }
  p.tensors.push_back(uniform_matrix(in, a.output));
  p.tensors.push_back(Matrix::Zero(1, a.output));
  if (a.add_const) p.tensors.push_back(Matrix::Zero(1, 1));
  return p;
}

/// All-zero parameters (unit layer-norm gains), handy for constant networks.
inline NetworkParams zero_network(const Architecture& a) {
  Rng rng(0);
  NetworkParams p = init_network(a, rng);
  for (auto& t : p.tensors) t.setZero();
  if (a.layer_norm)
    for (int l = 0; l < a.depth; ++l) p.tensors[static_cast<std::size_t>(l) * 4 + 2].setOnes();
  return p;
}

struct ForwardOptions {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

/// Puts the tensors on the tape as variables (trainable) or constants.
inline std::vector<Var> bind(Tape& tape, const NetworkParams& p, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(p.tensors.size());
  for (const auto& t : p.tensors) vars.push_back(trainable ? tape.variable(t) : tape.constant(t));
  return vars;
}

/// Inverted-dropout mask. Each 64-bit draw feeds four 16-bit lanes, so the
/// drop probability is `rate` rounded to a multiple of 2^-16.
inline Matrix dropout_mask(Index rows, Index cols, double rate, Rng& rng) {
  Matrix mask(rows, cols);
  const auto cut = static_cast<std::uint64_t>(std::llround(rate * 65536.0));
  const double keep = 1.0 / (1.0 - static_cast<double>(cut) / 65536.0);
  double* data = mask.data();
  const Index n = mask.size();
  for (Index i = 0; i < n; i += 4) {
    std::uint64_t bits = rng.next_u64();
    for (Index k = i; k < std::min(n, i + 4); ++k, bits >>= 16) data[k] = (bits & 0xffffULL) < cut ? 0.0 : keep;
  }
  return mask;
}

/// Fused hidden layer: mask .* elu(layer_norm(x W + b; gain, shift)).
/// An empty mask means no dropout. Equivalent to composing matmul, add_row,
/// layer_norm_rows, elu and mul_const, but works through the rows in blocks
/// that stay in cache.
inline Var dense_norm_elu(Var x, Var w, Var b, Var gain, Var shift, Matrix mask, double eps = 1e-5) {
  static constexpr Index block = 256;
  const Index k = w.cols();
  if (x.cols() != w.rows() || b.cols() != k || gain.cols() != k || shift.cols() != k)
    throw UsageError("dense_norm_elu: shape mismatch");
  Tape& t = *x.tape;
  const Index n = x.rows();
  if (mask.size() != 0 && (mask.rows() != n || mask.cols() != k)) throw UsageError("dense_norm_elu: mask shape mismatch");
  Matrix xhat(n, k), out(n, k);
  Eigen::VectorXd inv_sigma(n);
  const auto bias = b.value().row(0).array();
  const auto g0 = gain.value().row(0).array();
  const auto s0 = shift.value().row(0).array();
  for (Index r = 0; r < n; r += block) {
    const Index m = std::min(block, n - r);
    auto z = xhat.middleRows(r, m);
    z.noalias() = x.value().middleRows(r, m) * w.value();
    z.array().rowwise() += bias;
    const Eigen::VectorXd mu = z.rowwise().mean();
    z.colwise() -= mu;
    auto is = inv_sigma.segment(r, m);
    is = ((z.array().square().rowwise().sum() / static_cast<double>(k)) + eps).rsqrt().matrix();
    z = is.asDiagonal() * z;
    auto o = out.middleRows(r, m);
    for (Index j = 0; j < k; ++j) {
      const auto pre = z.col(j).array() * g0(j) + s0(j);
      o.col(j).array() = pre.max(0.0) + (pre.min(0.0).exp() - 1.0);
    }
    if (mask.size() != 0) o.array() *= mask.middleRows(r, m).array();
  }
  const bool grad = detail::any_grad({x, w, b, gain, shift});
  if (!grad) return t.constant(std::move(out));
  return t.push(std::move(out), true,
                [x, w, b, gain, shift, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma), mask = std::move(mask),
                 k](Tape& t, const Matrix& g) {
                  const Index n = g.rows();
                  const bool need_x = t.requires_grad(x);
                  const auto g0 = gain.value().row(0).array();
                  const auto s0 = shift.value().row(0).array();
                  Matrix d_gain = Matrix::Zero(1, k), d_shift = Matrix::Zero(1, k), d_b = Matrix::Zero(1, k);
                  Matrix d_w = Matrix::Zero(w.rows(), k);
                  Matrix d_x = need_x ? Matrix(n, x.cols()) : Matrix{};
                  Matrix da(std::min(block, n), k);
                  for (Index r = 0; r < n; r += block) {
                    const Index m = std::min(block, n - r);
                    const auto z = xhat.middleRows(r, m);
                    auto a = da.topRows(m);
                    for (Index j = 0; j < k; ++j) {
                      const auto pre = z.col(j).array() * g0(j) + s0(j);
                      a.col(j).array() = g.col(j).segment(r, m).array() * pre.min(0.0).exp();  // elu'(p) = exp(min(p, 0))
                      if (mask.size() != 0) a.col(j).array() *= mask.col(j).segment(r, m).array();
                      d_gain(0, j) += a.col(j).dot(z.col(j));
                      d_shift(0, j) += a.col(j).sum();
                      a.col(j) *= g0(j);  // now d xhat
                    }
                    const Eigen::VectorXd m1 = a.rowwise().mean();
                    const Eigen::VectorXd m2 = a.cwiseProduct(z).rowwise().sum() / static_cast<double>(k);
                    a.colwise() -= m1;
                    a -= m2.asDiagonal() * z;
                    a = inv_sigma.segment(r, m).asDiagonal() * a;  // now d(xW + b)
                    d_b += a.colwise().sum();
                    d_w.noalias() += x.value().middleRows(r, m).transpose() * a;
                    if (need_x) d_x.middleRows(r, m).noalias() = a * w.value().transpose();
                  }
                  if (t.requires_grad(gain)) t.accumulate(gain, d_gain);
                  if (t.requires_grad(shift)) t.accumulate(shift, d_shift);
                  if (t.requires_grad(b)) t.accumulate(b, d_b);
                  if (t.requires_grad(w)) t.accumulate(w, d_w);
                  if (need_x) t.accumulate(x, d_x);
                });
}

/// Forward pass on the tape. `input` is (batch x arch.input); the result is
/// (batch x arch.output). Dropout is inverted and applied only in training.
inline Var forward(const Architecture& a, std::span<const Var> params, Var input, const ForwardOptions& opt = {}) {
  if (input.cols() != a.input)
    throw UsageError("forward: input width " + std::to_string(input.cols()) + " does not match " + std::to_string(a.input));
  if (params.size() != expected_tensor_count(a)) throw UsageError("forward: wrong parameter count");
  if (!input.value().allFinite()) throw NumericalError("forward: non-finite input");
  const bool drop = opt.training && opt.dropout > 0.0;
  if (drop && (opt.rng == nullptr || opt.dropout >= 1.0)) throw UsageError("forward: dropout needs an rng and rate < 1");

  Var h = input;
  std::size_t k = 0;
  for (int l = 0; l < a.depth; ++l) {
    if (a.layer_norm) {
      Matrix mask = drop ? dropout_mask(h.rows(), a.hidden, opt.dropout, *opt.rng) : Matrix{};
      h = dense_norm_elu(h, params[k], params[k + 1], params[k + 2], params[k + 3], std::move(mask));
      k += 4;
      continue;
    }
    h = elu(add_row(matmul(h, params[k]), params[k + 1]));
    k += 2;
    if (drop) h = mul_const(h, dropout_mask(h.rows(), h.cols(), opt.dropout, *opt.rng));
  }
  h = add_row(matmul(h, params[k]), params[k + 1]);
  k += 2;
  if (a.add_const) h = add_scalar(h, params[k]);
  switch (a.head) {
    case Head::softplus: return softplus(h);
    case Head::softmax: return softmax_rows(h);
    case Head::linear: break;
  }
  return h;
}

/// Plain evaluation without gradients.
inline Matrix evaluate(const NetworkParams& p, const Matrix& input, const ForwardOptions& opt = {}) {
  Tape tape;
  const auto vars = bind(tape, p, false);
  return forward(p.arch, vars, tape.constant(input), opt).value();
}

struct AdamState {
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  static AdamState for_params(std::span<const Matrix> params, double lr = 1e-3) {
    AdamState s;
    s.lr = lr;
    for (const auto& p : params) {
      s.m.push_back(Matrix::Zero(p.rows(), p.cols()));
      s.v.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
    return s;
  }
};

/// One bias-corrected Adam step that descends along `grads`.
inline void adam_update(AdamState& s, std::span<Matrix> params, std::span<const Matrix> grads) {
  if (params.size() != grads.size() || params.size() != s.m.size()) throw UsageError("adam_update: tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols())
      throw UsageError("adam_update: shape mismatch");
    if (!grads[i].allFinite()) throw NumericalError("adam_update: non-finite gradient");
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i].cwiseProduct(grads[i]);
    params[i].array() -= s.lr * (s.m[i].array() / c1) / ((s.v[i].array() / c2).sqrt() + s.eps);
  }
}

}  // namespace adham::diff
