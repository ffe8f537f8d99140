#pragma once

// Hand-built models and random data for tests.

#include <cmath>
#include <vector>

#include "adham/model.hpp"

namespace fixtures {

using namespace adham;
using adham::diff::Architecture;
using adham::diff::Head;
using adham::diff::Index;

inline Matrix random_matrix(Index r, Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m(i) = scale * (2.0 * rng.uniform() - 1.0);
  return m;
}

/// Hazard network with constant output c (per scaled time unit).
inline HazardNet constant_hazard(double c, std::size_t d) {
  diff::NetworkParams p = diff::zero_network({2, 3, 1, 1, Head::softplus, true, false});
  p.tensors.back()(0, 0) = std::log(std::expm1(c));
  return {p, d};
}

/// Hazard a * t: a depth-0 network with a linear head.
inline HazardNet linear_time_hazard(double a, std::size_t d) {
  Matrix w = Matrix::Zero(2, 1);
  w(0, 0) = a;
  return {{{2, 0, 0, 1, Head::linear, false, false}, {w, Matrix::Zero(1, 1)}}, d};
}

/// softplus(a x_d + b t + c) with no hidden layers.
inline HazardNet softplus_hazard(double a, double b, double c, std::size_t d) {
  Matrix w(2, 1);
  w << b, a;
  return {{{2, 0, 0, 1, Head::softplus, false, false}, {w, Matrix::Constant(1, 1, c)}}, d};
}

/// Softmax-of-linear assignment network (no hidden layers).
inline AssignmentNet linear_assignment(const Matrix& w, const Matrix& b) {
  return {{{static_cast<int>(w.rows()), 0, 0, static_cast<int>(w.cols()), Head::softmax, false, false}, {w, b}}, {}};
}

/// Assembles a model with identity standardization and time scale 1.
inline AdhamModel assemble(AssignmentNet a, Matrix logits, std::vector<HazardNet> hazards, double time_scale = 1.0) {
  AdhamModel m;
  m.assignment = std::move(a);
  m.importance.logits = std::move(logits);
  m.hazards = std::move(hazards);
  const std::size_t D = m.hazards.size();
  m.stats.mean.assign(D, 0.0);
  m.stats.std.assign(D, 1.0);
  for (std::size_t d = 0; d < D; ++d) m.feature_names.push_back("x" + std::to_string(d));
  m.time_scale = time_scale;
  check_model(m);
  return m;
}

/// Small random model with perturbed parameters everywhere.
inline AdhamModel random_model(std::size_t D, std::size_t C, Rng& rng, int width = 4, int depth = 2, bool layer_norm = true,
                               bool add_const = false) {
  ModelShape shape{C, width, depth, layer_norm, add_const};
  AdhamModel m = make_model(shape, D, rng);
  const auto jiggle = [&](diff::NetworkParams& p) {
    for (auto& t : p.tensors) t += random_matrix(t.rows(), t.cols(), rng, 0.3);
  };
  jiggle(m.assignment.params);
  for (auto& h : m.hazards) jiggle(h.params);
  m.importance.logits = random_matrix(static_cast<Index>(C), static_cast<Index>(D), rng, 1.5);
  return m;
}

inline std::vector<SurvivalRecord> random_records(std::size_t n, std::size_t D, Rng& rng, double max_time = 2.0) {
  std::vector<SurvivalRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    SurvivalRecord r;
    for (std::size_t d = 0; d < D; ++d) r.x.push_back(2.0 * rng.uniform() - 1.0);
    r.t = 0.05 + max_time * rng.uniform();
    r.delta = static_cast<int>(rng.below(2));
    out.push_back(std::move(r));
  }
  return out;
}

inline Matrix rows_of(const std::vector<SurvivalRecord>& records) {
  Matrix X(static_cast<Index>(records.size()), static_cast<Index>(records.at(0).x.size()));
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t d = 0; d < records[i].x.size(); ++d) X(static_cast<Index>(i), static_cast<Index>(d)) = records[i].x[d];
  return X;
}

}  // namespace fixtures
