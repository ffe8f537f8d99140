#pragma once

// Mixture of additive hazards.
//
// Each covariate d owns a population-level hazard network lambda_d(t, x_d).
// An assignment network maps the full covariate vector to subgroup
// probabilities f(x) on the C-simplex, and every subgroup c carries a row
// beta_c on the D-simplex. The patient hazard is
//
//   lambda(t | x) = sum_d w_d(x) lambda_d(t, x_d),   w(x) = beta^T f(x).
//
// All model-facing covariates are standardized. Times are in dataset units;
// networks see t / time_scale and hazards are reported per dataset unit.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adham/data.hpp"
#include "adham/diff/network.hpp"
#include "adham/error.hpp"
#include "adham/rng.hpp"

namespace adham {

using diff::Matrix;
using diff::Tape;
using diff::Var;
using Vector = Eigen::VectorXd;

struct HazardNet {
  diff::NetworkParams params;  // input (t / time_scale, x_d), softplus head of width 1
  std::size_t covariate = 0;
};

struct AssignmentNet {
  diff::NetworkParams params;  // input x, softmax head of width C
  /// Subgroup merge map: output g is the sum of raw softmax outputs in
  /// groups[g]. Empty means identity.
  std::vector<std::vector<std::size_t>> groups;

  std::size_t raw_width() const { return static_cast<std::size_t>(params.arch.output); }
  std::size_t width() const { return groups.empty() ? raw_width() : groups.size(); }

  /// Raw-to-merged summation matrix (raw_width x width).
  Matrix group_matrix() const {
    Matrix g = Matrix::Zero(static_cast<diff::Index>(raw_width()), static_cast<diff::Index>(width()));
    for (std::size_t k = 0; k < groups.size(); ++k)
      for (auto c : groups[k]) g(static_cast<diff::Index>(c), static_cast<diff::Index>(k)) = 1.0;
    return g;
  }
};

/// Subgroup importances stored as unconstrained logits (C x D); each row is
/// softmaxed on read.
struct ImportanceMatrix {
  Matrix logits;

  Matrix beta() const {
    Matrix b = logits;
    for (diff::Index r = 0; r < b.rows(); ++r) {
      b.row(r) = (b.row(r).array() - b.row(r).maxCoeff()).exp().matrix();
      b.row(r) /= b.row(r).sum();
    }
    return b;
  }
};

struct Lineage {
  std::size_t fold = 0;
  std::size_t folds = 0;
  std::uint64_t seed = 0;        // training seed
  std::uint64_t split_seed = 0;  // seed of the fold split
  std::string source_hash;  // set on refined models
  double threshold = 0.0;   // refinement threshold h, 0 when not refined
  std::size_t original_c = 0;
};

struct AdhamModel {
  AssignmentNet assignment;
  ImportanceMatrix importance;
  std::vector<HazardNet> hazards;
  StandardizationStats stats;
  std::vector<std::string> feature_names;
  double time_scale = 1.0;
  Lineage lineage;

  std::size_t C() const { return assignment.width(); }
  std::size_t D() const { return hazards.size(); }
};

/// Network sizes. The defaults are three hidden ELU layers of width 100 with
/// layer norm for both the assignment and the hazard networks.
struct ModelShape {
  std::size_t C = 100;
  int hidden = 100;
  int depth = 3;
  bool layer_norm = true;
  bool add_const = false;
};

inline diff::Architecture hazard_architecture(const ModelShape& s) {
  return {2, s.hidden, s.depth, 1, diff::Head::softplus, s.layer_norm, s.add_const};
}

inline diff::Architecture assignment_architecture(const ModelShape& s, std::size_t D) {
  return {static_cast<int>(D), s.hidden, s.depth, static_cast<int>(s.C), diff::Head::softmax, s.layer_norm, false};
}

/// Freshly initialized model; beta logits start at zero (uniform rows).
inline AdhamModel make_model(const ModelShape& s, std::size_t D, Rng& rng) {
  if (D == 0 || s.C == 0) throw UsageError("make_model: C and D must be positive");
  AdhamModel m;
  m.assignment.params = diff::init_network(assignment_architecture(s, D), rng);
  m.importance.logits = Matrix::Zero(static_cast<diff::Index>(s.C), static_cast<diff::Index>(D));
  for (std::size_t d = 0; d < D; ++d) m.hazards.push_back({diff::init_network(hazard_architecture(s), rng), d});
  m.stats.mean.assign(D, 0.0);
  m.stats.std.assign(D, 1.0);
  for (std::size_t d = 0; d < D; ++d) m.feature_names.push_back("x" + std::to_string(d));
  return m;
}

inline void check_model(const AdhamModel& m) {
  const auto D = m.D();
  if (D == 0) throw DataError("model has no hazard networks");
  if (m.importance.logits.cols() != static_cast<diff::Index>(D) ||
      m.importance.logits.rows() != static_cast<diff::Index>(m.C()))
    throw DataError("importance matrix shape does not match C x D");
  if (m.assignment.params.arch.input != static_cast<int>(D)) throw DataError("assignment input width differs from D");
  diff::check_shapes(m.assignment.params);
  for (std::size_t d = 0; d < D; ++d) {
    diff::check_shapes(m.hazards[d].params);
    if (m.hazards[d].params.arch.input != 2 || m.hazards[d].params.arch.output != 1)
      throw DataError("hazard network " + std::to_string(d) + " must map (t, x_d) to one rate");
    if (m.hazards[d].covariate != d) throw DataError("hazard networks out of covariate order");
  }
  if (m.stats.mean.size() != D || m.stats.std.size() != D || m.feature_names.size() != D)
    throw DataError("standardization stats or feature names do not match D");
  if (!(m.time_scale > 0.0)) throw DataError("time_scale must be positive");
}

// ---------------------------------------------------------------------------
// Point queries

namespace detail {
inline void check_x(const AdhamModel& m, std::span<const double> x) {
  if (x.size() != m.D())
    throw UsageError("covariate vector has length " + std::to_string(x.size()) + ", model expects " + std::to_string(m.D()));
}
inline void check_time(double t) {
  if (!std::isfinite(t) || t < 0.0) throw NumericalError("time must be finite and nonnegative");
}
}  // namespace detail

/// Hazard networks evaluated at dataset-unit times `t` for a fixed x_d.
inline Vector population_hazards(const HazardNet& h, std::span<const double> times, double x_d, double time_scale) {
  if (!std::isfinite(x_d)) throw NumericalError("population_hazard: non-finite covariate");
  Matrix in(static_cast<diff::Index>(times.size()), 2);
  for (std::size_t k = 0; k < times.size(); ++k) {
    detail::check_time(times[k]);
    in(static_cast<diff::Index>(k), 0) = times[k] / time_scale;
    in(static_cast<diff::Index>(k), 1) = x_d;
  }
  return diff::evaluate(h.params, in).col(0) / time_scale;
}

inline double population_hazard(const HazardNet& h, double t, double x_d, double time_scale = 1.0) {
  const double times[] = {t};
  return population_hazards(h, times, x_d, time_scale)(0);
}

/// Assignment probabilities for a batch of covariate rows (n x D -> n x C).
inline Matrix assignment_matrix(const AdhamModel& m, const Matrix& X) {
  Matrix f = diff::evaluate(m.assignment.params, X);
  if (!m.assignment.groups.empty()) f = f * m.assignment.group_matrix();
  return f;
}

inline Vector assignment_probs(const AdhamModel& m, std::span<const double> x) {
  detail::check_x(m, x);
  const Matrix X = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<diff::Index>(x.size()));
  return assignment_matrix(m, X).row(0).transpose();
}

/// p(d | x) for a batch of rows (n x D).
inline Matrix covariate_weight_matrix(const AdhamModel& m, const Matrix& X) {
  if (m.D() == 1) return Matrix::Ones(X.rows(), 1);
  return assignment_matrix(m, X) * m.importance.beta();
}

inline Vector covariate_weight(const AdhamModel& m, std::span<const double> x) {
  detail::check_x(m, x);
  const Matrix X = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<diff::Index>(x.size()));
  return covariate_weight_matrix(m, X).row(0).transpose();
}

/// Per-covariate individual hazard components on a time grid (times x D):
/// entry (k, d) = p(d | x) lambda_d(t_k, x_d). Rows sum to the marginal hazard.
inline Matrix hazard_decomposition(const AdhamModel& m, std::span<const double> x, std::span<const double> times) {
  const Vector w = covariate_weight(m, x);
  Matrix out(static_cast<diff::Index>(times.size()), static_cast<diff::Index>(m.D()));
  for (std::size_t d = 0; d < m.D(); ++d)
    out.col(static_cast<diff::Index>(d)) = w(static_cast<diff::Index>(d)) * population_hazards(m.hazards[d], times, x[d], m.time_scale);
  if (!out.allFinite()) throw NumericalError("hazard_decomposition: non-finite hazard");
  return out;
}

inline Vector marginal_hazards(const AdhamModel& m, std::span<const double> x, std::span<const double> times) {
  return hazard_decomposition(m, x, times).rowwise().sum();
}

inline double marginal_hazard(const AdhamModel& m, std::span<const double> x, double t) {
  const double times[] = {t};
  return marginal_hazards(m, x, times)(0);
}

// ---------------------------------------------------------------------------
// Monte Carlo log-likelihood

/// A mini-batch laid out for the likelihood estimator. Column 0 of `tau`
/// holds each record's own (scaled) time; columns 1..M hold importance
/// samples u_ij * tau_i with u_ij ~ U(0, 1).
struct LikelihoodBatch {
  Matrix X;             // L x D standardized covariates
  Matrix tau;           // L x (M + 1) scaled times
  Matrix event_weight;  // L x 1: delta_i for records with t_i > 0, else 0
  Matrix integral_weight;  // L x M: tau_i / M for every sample
  double log_time_scale = 0.0;

  diff::Index L() const { return X.rows(); }
  diff::Index M() const { return tau.cols() - 1; }
};

/// Draws the importance samples for `batch`; uniforms are consumed
/// record-major, M per record.
inline LikelihoodBatch make_batch(std::span<const SurvivalRecord> batch, int M, double time_scale, Rng& rng) {
  if (batch.empty()) throw UsageError("likelihood batch is empty");
  if (M < 1) throw UsageError("need at least one importance sample");
  const auto L = static_cast<diff::Index>(batch.size());
  const auto D = static_cast<diff::Index>(batch[0].x.size());
  LikelihoodBatch b;
  b.X.resize(L, D);
  b.tau.resize(L, M + 1);
  b.event_weight.resize(L, 1);
  b.integral_weight.resize(L, M);
  b.log_time_scale = std::log(time_scale);
  for (diff::Index i = 0; i < L; ++i) {
    const auto& r = batch[static_cast<std::size_t>(i)];
    if (static_cast<diff::Index>(r.x.size()) != D) throw UsageError("batch records differ in width");
    detail::check_time(r.t);
    for (diff::Index d = 0; d < D; ++d) b.X(i, d) = r.x[static_cast<std::size_t>(d)];
    const double tau = r.t / time_scale;
    b.tau(i, 0) = tau;
    for (int j = 1; j <= M; ++j) b.tau(i, j) = rng.uniform_open() * tau;
    b.event_weight(i, 0) = (r.delta == 1 && r.t > 0.0) ? 1.0 : 0.0;
    b.integral_weight.row(i).setConstant(tau / M);
  }
  return b;
}

/// Hazard network d over every (record, time) cell of the batch, on the tape.
/// Returns the L x (M + 1) matrix of rates in scaled-time units.
inline Var hazard_surface(Tape& tape, const diff::Architecture& arch, std::span<const Var> params,
                          const LikelihoodBatch& b, std::size_t d, const diff::ForwardOptions& opt = {}) {
  const diff::Index L = b.L();
  const diff::Index K = b.tau.cols();
  Matrix in(L * K, 2);
  in.col(0) = b.tau.reshaped();
  in.col(1) = b.X.col(static_cast<diff::Index>(d)).replicate(K, 1);
  Var out = diff::forward(arch, params, tape.constant(std::move(in)), opt);
  return diff::reshape(out, L, K);
}

/// (N / L) sum_i [ delta_i log h_i0 - (tau_i / M) sum_j h_ij ] - (N / L) sum_i delta_i log(time_scale),
/// i.e. the estimator in dataset time units given scaled-time rates `h`.
inline Var mc_loglik_from_surface(Var h, const LikelihoodBatch& b, double N) {
  const diff::Index L = b.L();
  Var log_term = diff::weighted_sum(diff::log(diff::block(h, 0, 0, L, 1)), b.event_weight);
  Var integral = diff::weighted_sum(diff::block(h, 0, 1, L, b.M()), b.integral_weight);
  const double factor = N / static_cast<double>(L);
  Tape& t = *h.tape;
  Var shift = t.constant_scalar(-factor * b.log_time_scale * b.event_weight.sum());
  return diff::add(diff::scale(diff::sub(log_term, integral), factor), shift);
}

/// Model parameters placed on a tape. Tensors of a part are variables when
/// that part is trainable and constants otherwise.
struct ModelVars {
  std::vector<Var> assignment;
  Var beta_logits;
  std::vector<std::vector<Var>> hazards;
};

struct Trainable {
  bool assignment = true;
  bool importance = true;
  bool hazards = true;
};

inline ModelVars bind_model(Tape& tape, const AdhamModel& m, Trainable which) {
  ModelVars v;
  v.assignment = diff::bind(tape, m.assignment.params, which.assignment);
  v.beta_logits = which.importance ? tape.variable(m.importance.logits) : tape.constant(m.importance.logits);
  for (const auto& h : m.hazards) v.hazards.push_back(diff::bind(tape, h.params, which.hazards));
  return v;
}

/// Regroups tape variables laid out as in flatten() below.
inline ModelVars model_vars(const AdhamModel& m, std::span<const Var> flat) {
  ModelVars v;
  std::size_t k = 0;
  for (std::size_t i = 0; i < m.assignment.params.tensors.size(); ++i) v.assignment.push_back(flat[k++]);
  v.beta_logits = flat[k++];
  for (const auto& h : m.hazards) {
    v.hazards.emplace_back();
    for (std::size_t i = 0; i < h.params.tensors.size(); ++i) v.hazards.back().push_back(flat[k++]);
  }
  if (k != flat.size()) throw UsageError("model_vars: tensor count mismatch");
  return v;
}

/// Assignment probabilities (L x C, merged groups applied) on the tape.
inline Var assignment_on_tape(const AdhamModel& m, const ModelVars& v, const Matrix& X, const diff::ForwardOptions& opt = {}) {
  Tape& t = *v.beta_logits.tape;
  Var f = diff::forward(m.assignment.params.arch, v.assignment, t.constant(X), opt);
  if (!m.assignment.groups.empty()) f = diff::matmul(f, t.constant(m.assignment.group_matrix()));
  return f;
}

/// Covariate weights p(d | x) (L x D) from assignment probabilities on the tape.
inline Var covariate_weights_on_tape(Var f, const ModelVars& v) {
  return diff::matmul(f, diff::softmax_rows(v.beta_logits));
}

/// Marginal-hazard estimator on the tape, given per-covariate surfaces.
inline Var mc_loglik_on_tape(Var weights, std::span<const Var> surfaces, const LikelihoodBatch& b, double N) {
  return mc_loglik_from_surface(diff::mix_columns(weights, surfaces), b, N);
}

/// Full estimator with every part of the model read from `v`.
inline Var mc_loglik_on_tape(const AdhamModel& m, const ModelVars& v, const LikelihoodBatch& b, double N,
                             const diff::ForwardOptions& opt = {}) {
  std::vector<Var> surfaces;
  for (std::size_t d = 0; d < m.D(); ++d)
    surfaces.push_back(hazard_surface(*v.beta_logits.tape, m.hazards[d].params.arch, v.hazards[d], b, d, opt));
  Var w = covariate_weights_on_tape(assignment_on_tape(m, v, b.X, opt), v);
  return mc_loglik_on_tape(w, surfaces, b, N);
}

struct RegularizerWeights {
  double orthogonality = 1.0;
  double entropy = 1.0;
};

/// w_orth / (L (L - 1)) sum_{i != j} <f(x_i), f(x_j)>  +  w_ent / L sum_i sum_d p(d|x_i) log p(d|x_i).
inline Var regularizer_on_tape(Var f, Var weights, RegularizerWeights w) {
  const double L = static_cast<double>(f.rows());
  if (f.rows() < 2) throw UsageError("regularizer needs a batch of at least two records");
  Var colsum = diff::col_sum(f);
  Var cross = diff::sub(diff::sum(diff::square(colsum)), diff::sum(diff::square(f)));
  Var orth = diff::scale(cross, w.orthogonality / (L * (L - 1.0)));
  Var neg_entropy = diff::scale(diff::sum(diff::xlogx(weights)), w.entropy / L);
  return diff::add(orth, neg_entropy);
}

/// Hazard surfaces of every covariate, evaluated without gradients.
inline std::vector<Matrix> hazard_surfaces(const AdhamModel& m, const LikelihoodBatch& b, const diff::ForwardOptions& opt = {}) {
  std::vector<Matrix> out;
  out.reserve(m.D());
  for (std::size_t d = 0; d < m.D(); ++d) {
    Tape tape;
    const auto params = diff::bind(tape, m.hazards[d].params, false);
    out.push_back(hazard_surface(tape, m.hazards[d].params.arch, params, b, d, opt).value());
  }
  return out;
}

/// Marginal-hazard estimator for frozen parameters given precomputed surfaces.
inline double mc_loglik(const AdhamModel& m, const LikelihoodBatch& b, std::span<const Matrix> surfaces, double N) {
  Tape tape;
  const ModelVars v = bind_model(tape, m, {false, false, false});
  std::vector<Var> parts;
  for (const auto& s : surfaces) parts.push_back(tape.constant(s));
  Var w = covariate_weights_on_tape(assignment_on_tape(m, v, b.X), v);
  const double value = mc_loglik_on_tape(w, parts, b, N).scalar();
  if (!std::isfinite(value)) throw NumericalError("mc_loglik: non-finite value");
  return value;
}

/// Unbiased estimate of the log-likelihood of `batch` scaled to a dataset of
/// size N, using M uniform importance samples per record.
inline double mc_loglik(const AdhamModel& m, std::span<const SurvivalRecord> batch, int M, double N, Rng& rng) {
  const LikelihoodBatch b = make_batch(batch, M, m.time_scale, rng);
  return mc_loglik(m, b, hazard_surfaces(m, b), N);
}

/// Per-covariate estimator: the same as mc_loglik with lambda_d(t, x_d) in
/// place of the marginal hazard.
inline double mc_loglik_d(const HazardNet& h, std::span<const SurvivalRecord> batch, int M, double N, Rng& rng,
                          double time_scale = 1.0) {
  const LikelihoodBatch b = make_batch(batch, M, time_scale, rng);
  Tape tape;
  const auto params = diff::bind(tape, h.params, false);
  const double value = mc_loglik_from_surface(hazard_surface(tape, h.params.arch, params, b, h.covariate), b, N).scalar();
  if (!std::isfinite(value)) throw NumericalError("mc_loglik_d: non-finite value");
  return value;
}

inline double regularizer(const AdhamModel& m, std::span<const SurvivalRecord> batch, RegularizerWeights w = {}) {
  if (batch.size() < 2) throw UsageError("regularizer needs a batch of at least two records");
  Matrix X(static_cast<diff::Index>(batch.size()), static_cast<diff::Index>(m.D()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].x.size() != m.D()) throw UsageError("regularizer: record width differs from D");
    for (std::size_t d = 0; d < m.D(); ++d) X(static_cast<diff::Index>(i), static_cast<diff::Index>(d)) = batch[i].x[d];
  }
  Tape tape;
  const ModelVars v = bind_model(tape, m, {false, false, false});
  Var f = assignment_on_tape(m, v, X);
  return regularizer_on_tape(f, covariate_weights_on_tape(f, v), w).scalar();
}

// ---------------------------------------------------------------------------
// Flat parameter views (gradient checks, optimizers)

/// Order: assignment tensors, beta logits, then each hazard net's tensors.
inline std::vector<Matrix> flatten(const AdhamModel& m) {
  std::vector<Matrix> out = m.assignment.params.tensors;
  out.push_back(m.importance.logits);
  for (const auto& h : m.hazards) out.insert(out.end(), h.params.tensors.begin(), h.params.tensors.end());
  return out;
}

inline void unflatten(AdhamModel& m, std::span<const Matrix> flat) {
  std::size_t k = 0;
  for (auto& t : m.assignment.params.tensors) t = flat[k++];
  m.importance.logits = flat[k++];
  for (auto& h : m.hazards)
    for (auto& t : h.params.tensors) t = flat[k++];
  if (k != flat.size()) throw UsageError("unflatten: tensor count mismatch");
}

}  // namespace adham
