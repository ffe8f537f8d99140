#pragma once

// Subgroup refinement: subgroups whose importance rows are strongly
// correlated are merged. The merged assignment probability is the sum of the
// members' probabilities, so the assignment network itself is untouched.

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "adham/error.hpp"
#include "adham/model.hpp"
#include "adham/serialize.hpp"

namespace adham {

struct RefinementPlan {
  std::vector<std::vector<std::size_t>> groups;  // sorted members; groups ordered by first member
  double threshold = 1.0;

  bool is_identity() const {
    return std::all_of(groups.begin(), groups.end(), [](const auto& g) { return g.size() == 1; });
  }
};

/// Cosine similarity of importance rows (C x C).
inline Matrix correlation_matrix(const ImportanceMatrix& b) {
  const Matrix beta = b.beta();
  const Eigen::VectorXd norms = beta.rowwise().norm();
  if ((norms.array() <= 0.0).any()) throw NumericalError("correlation_matrix: zero importance row");
  Matrix rho = beta * beta.transpose();
  rho.array().colwise() /= norms.array();
  rho.array().rowwise() /= norms.transpose().array();
  rho.diagonal().setOnes();
  return rho.cwiseMin(1.0).cwiseMax(0.0);
}

namespace detail {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }

  std::size_t find(std::size_t a) {
    while (parent_[a] != a) a = parent_[a] = parent_[parent_[a]];
    return a;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace detail

/// Connected components of the graph with an edge wherever rho >= h.
inline RefinementPlan combine_clusters(const Matrix& rho, double h) {
  if (!(h > 0.0 && h <= 1.0)) throw UsageError("refinement threshold must lie in (0, 1]");
  if (rho.rows() != rho.cols() || rho.rows() == 0) throw UsageError("correlation matrix must be square and nonempty");
  const auto C = static_cast<std::size_t>(rho.rows());
  detail::DisjointSets sets(C);
  for (std::size_t a = 0; a < C; ++a)
    for (std::size_t b = a + 1; b < C; ++b)
      if (rho(static_cast<diff::Index>(a), static_cast<diff::Index>(b)) >= h) sets.unite(a, b);

  RefinementPlan plan;
  plan.threshold = h;
  std::vector<std::size_t> slot(C, C);
  for (std::size_t c = 0; c < C; ++c) {
    const auto r = sets.find(c);
    if (slot[r] == C) {
      slot[r] = plan.groups.size();
      plan.groups.emplace_back();
    }
    plan.groups[slot[r]].push_back(c);
  }
  return plan;
}

inline void check_plan(const RefinementPlan& plan, std::size_t C) {
  std::vector<int> seen(C, 0);
  for (const auto& g : plan.groups) {
    if (g.empty()) throw UsageError("refinement plan has an empty group");
    for (auto c : g) {
      if (c >= C) throw UsageError("refinement plan refers to subgroup " + std::to_string(c) + " of " + std::to_string(C));
      ++seen[c];
    }
  }
  if (std::any_of(seen.begin(), seen.end(), [](int s) { return s != 1; }))
    throw UsageError("refinement plan is not a partition of the subgroups");
}

/// Merges subgroups per `plan`. Each merged importance row is the average of
/// its members' rows weighted by their mean assignment probability over
/// `sample` (raw covariates). Groups of identical rows keep their logits.
inline AdhamModel apply_merge(const AdhamModel& m, const RefinementPlan& plan, std::span<const SurvivalRecord> sample) {
  const std::size_t C = m.C();
  check_plan(plan, C);
  AdhamModel out = m;
  out.lineage.source_hash = model_hash(m);
  out.lineage.threshold = plan.threshold;
  if (out.lineage.original_c == 0) out.lineage.original_c = m.assignment.raw_width();
  if (plan.is_identity()) return out;

  const Matrix beta = m.importance.beta();
  const auto D = beta.cols();
  const auto identical = [&](const std::vector<std::size_t>& g) {
    for (auto c : g)
      if (beta.row(static_cast<diff::Index>(c)) != beta.row(static_cast<diff::Index>(g[0]))) return false;
    return true;
  };

  Eigen::VectorXd mass = Eigen::VectorXd::Ones(static_cast<diff::Index>(C));
  if (!sample.empty()) {
    Matrix X(static_cast<diff::Index>(sample.size()), D);
    for (std::size_t i = 0; i < sample.size(); ++i) {
      if (sample[i].x.size() != m.D()) throw DataError("merge sample width differs from the model's D");
      const auto z = m.stats.apply(sample[i].x);
      for (diff::Index d = 0; d < D; ++d) X(static_cast<diff::Index>(i), d) = z[static_cast<std::size_t>(d)];
    }
    mass = assignment_matrix(m, X).colwise().mean().transpose();
  } else {
    for (const auto& g : plan.groups)
      if (g.size() > 1 && !identical(g))
        throw UsageError("merging subgroups with different importance rows needs a nonempty sample");
  }

  Matrix logits(static_cast<diff::Index>(plan.groups.size()), D);
  std::vector<std::vector<std::size_t>> raw_groups;
  for (std::size_t k = 0; k < plan.groups.size(); ++k) {
    const auto& g = plan.groups[k];
    std::vector<std::size_t> raw;
    for (auto c : g) {
      if (m.assignment.groups.empty()) raw.push_back(c);
      else raw.insert(raw.end(), m.assignment.groups[c].begin(), m.assignment.groups[c].end());
    }
    std::sort(raw.begin(), raw.end());
    raw_groups.push_back(std::move(raw));

    const auto row = static_cast<diff::Index>(k);
    if (g.size() == 1 || identical(g)) {
      logits.row(row) = m.importance.logits.row(static_cast<diff::Index>(g[0]));
      continue;
    }
    Eigen::RowVectorXd merged = Eigen::RowVectorXd::Zero(D);
    double total = 0.0;
    for (auto c : g) total += mass(static_cast<diff::Index>(c));
    for (auto c : g) {
      const double w = total > 0.0 ? mass(static_cast<diff::Index>(c)) / total : 1.0 / static_cast<double>(g.size());
      merged += w * beta.row(static_cast<diff::Index>(c));
    }
    merged /= merged.sum();
    logits.row(row) = merged.array().max(DBL_MIN).log().matrix();
  }

  out.importance.logits = std::move(logits);
  out.assignment.groups = std::move(raw_groups);
  return out;
}

}  // namespace adham
