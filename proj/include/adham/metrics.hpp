#pragma once

// Survival prediction and IPCW evaluation.
//
// Cumulative hazards are Monte Carlo estimates stratified over the query
// grid: each interval (t_{k-1}, t_k] gets its own M uniform points, and the
// estimate at t_k is the running sum of the interval estimates. With a single
// query time this is (t / M) sum_j lambda(u_j t). Every increment is
// nonnegative, so survival curves never increase.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "adham/data.hpp"
#include "adham/error.hpp"
#include "adham/model.hpp"
#include "adham/rng.hpp"
#include "adham/serialize.hpp"

namespace adham {

struct SurvivalCurve {
  std::vector<double> times;
  std::vector<double> values;
};

namespace detail {

inline void check_grid(std::span<const double> times) {
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!std::isfinite(times[k]) || times[k] < 0.0) throw NumericalError("time grid must be finite and nonnegative");
    if (k > 0 && times[k] < times[k - 1]) throw UsageError("time grid must be sorted");
  }
}

/// Stratified sample points: M per grid interval, interval-major.
struct StratifiedPoints {
  std::vector<double> points;  // K * M
  std::vector<double> weight;  // K: interval width / M
};

inline StratifiedPoints stratified_points(std::span<const double> times, int M, Rng& rng) {
  if (M < 1) throw UsageError("need at least one importance sample");
  check_grid(times);
  StratifiedPoints s;
  s.points.reserve(times.size() * static_cast<std::size_t>(M));
  double prev = 0.0;
  for (double t : times) {
    const double width = t - prev;
    for (int j = 0; j < M; ++j) s.points.push_back(prev + rng.uniform_open() * width);
    s.weight.push_back(width / M);
    prev = t;
  }
  return s;
}

/// Running cumulative hazard on the grid from hazards at the stratified points.
inline Vector accumulate(const StratifiedPoints& s, const Eigen::Ref<const Vector>& rates) {
  const auto K = static_cast<diff::Index>(s.weight.size());
  const diff::Index M = K ? static_cast<diff::Index>(s.points.size()) / K : 0;
  Vector H(K);
  double total = 0.0;
  for (diff::Index k = 0; k < K; ++k) {
    total += s.weight[static_cast<std::size_t>(k)] * rates.segment(k * M, M).sum();
    H(k) = total;
  }
  return H;
}

inline SurvivalCurve to_curve(std::span<const double> times, const Vector& H) {
  SurvivalCurve c{{times.begin(), times.end()}, std::vector<double>(times.size())};
  for (std::size_t k = 0; k < times.size(); ++k) c.values[k] = std::exp(-H(static_cast<diff::Index>(k)));
  return c;
}

}  // namespace detail

/// Per-covariate cumulative hazards p(d|x) H_d(t) on the grid (times x D),
/// sharing one stratified sample set across covariates. `x` is standardized.
inline Matrix cumulative_hazard_decomposition(const AdhamModel& m, std::span<const double> x, std::span<const double> times,
                                              int M, Rng& rng) {
  const auto s = detail::stratified_points(times, M, rng);
  const Matrix parts = hazard_decomposition(m, x, s.points);
  Matrix out(static_cast<diff::Index>(times.size()), static_cast<diff::Index>(m.D()));
  for (diff::Index d = 0; d < out.cols(); ++d) out.col(d) = detail::accumulate(s, parts.col(d));
  return out;
}

inline SurvivalCurve individual_survival(const AdhamModel& m, std::span<const double> x, std::span<const double> times, int M,
                                         Rng& rng) {
  return detail::to_curve(times, cumulative_hazard_decomposition(m, x, times, M, rng).rowwise().sum());
}

/// Curve d is exp(-p(d|x) H_d(t)); their product is individual_survival for
/// the same rng state.
inline std::vector<SurvivalCurve> individual_survival_decomposition(const AdhamModel& m, std::span<const double> x,
                                                                    std::span<const double> times, int M, Rng& rng) {
  const Matrix H = cumulative_hazard_decomposition(m, x, times, M, rng);
  std::vector<SurvivalCurve> out;
  for (diff::Index d = 0; d < H.cols(); ++d) out.push_back(detail::to_curve(times, H.col(d)));
  return out;
}

inline SurvivalCurve population_survival(const HazardNet& h, double x_d, std::span<const double> times, int M, Rng& rng,
                                         double time_scale = 1.0) {
  const auto s = detail::stratified_points(times, M, rng);
  return detail::to_curve(times, detail::accumulate(s, population_hazards(h, s.points, x_d, time_scale)));
}

/// Survival probabilities (n x K) for rows of standardized covariates. Patient
/// i draws its samples from the i-th child stream of Rng(seed), so results do
/// not depend on chunking.
inline Matrix survival_matrix(const AdhamModel& m, const Matrix& X, std::span<const double> times, int M, std::uint64_t seed,
                              diff::Index chunk = 256) {
  detail::check_grid(times);
  const auto n = X.rows();
  const auto K = static_cast<diff::Index>(times.size());
  const diff::Index P = K * M;
  Rng parent(seed);
  std::vector<detail::StratifiedPoints> samples;
  samples.reserve(static_cast<std::size_t>(n));
  for (diff::Index i = 0; i < n; ++i) {
    Rng child = parent.split();
    samples.push_back(detail::stratified_points(times, M, child));
  }

  Matrix S(n, K);
  for (diff::Index lo = 0; lo < n; lo += chunk) {
    const diff::Index rows = std::min(chunk, n - lo);
    const Matrix w = covariate_weight_matrix(m, X.middleRows(lo, rows));
    Matrix H = Matrix::Zero(rows, K);
    Matrix in(rows * P, 2);
    for (std::size_t d = 0; d < m.D(); ++d) {
      for (diff::Index i = 0; i < rows; ++i) {
        const auto& pts = samples[static_cast<std::size_t>(lo + i)].points;
        for (diff::Index p = 0; p < P; ++p) {
          in(i * P + p, 0) = pts[static_cast<std::size_t>(p)] / m.time_scale;
          in(i * P + p, 1) = X(lo + i, static_cast<diff::Index>(d));
        }
      }
      const Matrix rates = diff::evaluate(m.hazards[d].params, in) / m.time_scale;
      for (diff::Index i = 0; i < rows; ++i)
        H.row(i) += w(i, static_cast<diff::Index>(d)) *
                    detail::accumulate(samples[static_cast<std::size_t>(lo + i)], rates.col(0).segment(i * P, P)).transpose();
    }
    if (!H.allFinite()) throw NumericalError("survival prediction: non-finite cumulative hazard");
    S.middleRows(lo, rows) = (-H).array().exp().matrix();
  }
  return S;
}

// ---------------------------------------------------------------------------
// Censoring distribution

/// Kaplan-Meier estimate of the censoring survival function G, treating
/// delta = 0 as the event. Right-continuous.
struct CensoringEstimate {
  std::vector<double> jumps;   // distinct censoring times
  std::vector<double> values;  // G just after each jump

  double at(double t) const {
    const auto it = std::upper_bound(jumps.begin(), jumps.end(), t);
    return it == jumps.begin() ? 1.0 : values[static_cast<std::size_t>(it - jumps.begin()) - 1];
  }
  /// Left limit G(t-).
  double before(double t) const {
    const auto it = std::lower_bound(jumps.begin(), jumps.end(), t);
    return it == jumps.begin() ? 1.0 : values[static_cast<std::size_t>(it - jumps.begin()) - 1];
  }
};

inline CensoringEstimate km_censoring(std::span<const SurvivalRecord> data) {
  std::vector<std::pair<double, int>> tc;
  tc.reserve(data.size());
  for (const auto& r : data) tc.emplace_back(r.t, r.delta == 0 ? 1 : 0);
  std::sort(tc.begin(), tc.end());
  CensoringEstimate g;
  double value = 1.0;
  std::size_t at_risk = tc.size();
  for (std::size_t i = 0; i < tc.size();) {
    std::size_t j = i, censored = 0;
    while (j < tc.size() && tc[j].first == tc[i].first) censored += static_cast<std::size_t>(tc[j++].second);
    if (censored > 0) {
      value *= 1.0 - static_cast<double>(censored) / static_cast<double>(at_risk);
      g.jumps.push_back(tc[i].first);
      g.values.push_back(value);
    }
    at_risk -= j - i;
    i = j;
  }
  return g;
}

inline CensoringEstimate km_censoring(const Dataset& d) { return km_censoring(d.records); }

// ---------------------------------------------------------------------------
// Metrics. Undefined results are std::nullopt.

/// Uno's IPCW concordance: comparable pairs have delta_i = 1, t_i < t_j and
/// t_i < horizon, weighted 1 / G(t_i-)^2. A higher risk for i is concordant;
/// equal risks count one half.
inline std::optional<double> c_index(std::span<const double> risk, std::span<const SurvivalRecord> data, double horizon,
                                     const CensoringEstimate& G) {
  if (risk.size() != data.size()) throw UsageError("c_index: prediction count differs from record count");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].delta != 1 || !(data[i].t < horizon)) continue;
    const double g = G.before(data[i].t);
    if (!(g > 0.0)) throw NumericalError("c_index: zero censoring survival at t = " + std::to_string(data[i].t));
    const double w = 1.0 / (g * g);
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (!(data[i].t < data[j].t)) continue;
      den += w;
      if (risk[i] > risk[j]) num += w;
      else if (risk[i] == risk[j]) num += 0.5 * w;
    }
  }
  if (den == 0.0) return std::nullopt;
  return num / den;
}

/// Graf's IPCW Brier score at `horizon` for predicted survival probabilities.
inline double brier(std::span<const double> survival, std::span<const SurvivalRecord> data, double horizon,
                    const CensoringEstimate& G) {
  if (survival.size() != data.size()) throw UsageError("brier: prediction count differs from record count");
  if (data.empty()) throw UsageError("brier: no records");
  double total = 0.0;
  const double g_horizon = G.at(horizon);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double s = survival[i];
    if (data[i].t > horizon) {
      if (!(g_horizon > 0.0)) throw NumericalError("brier: zero censoring survival at the horizon");
      total += (1.0 - s) * (1.0 - s) / g_horizon;
    } else if (data[i].delta == 1) {
      const double g = G.before(data[i].t);
      if (!(g > 0.0)) throw NumericalError("brier: zero censoring survival at t = " + std::to_string(data[i].t));
      total += s * s / g;
    }
  }
  return total / static_cast<double>(data.size());
}

/// Cumulative/dynamic AUROC: cases have an event by `horizon`, controls are
/// known to survive past it; records censored by the horizon are excluded.
inline std::optional<double> auroc(std::span<const double> risk, std::span<const SurvivalRecord> data, double horizon) {
  if (risk.size() != data.size()) throw UsageError("auroc: prediction count differs from record count");
  double num = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!(data[i].t <= horizon && data[i].delta == 1)) continue;
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (!(data[j].t > horizon)) continue;
      ++pairs;
      if (risk[i] > risk[j]) num += 1.0;
      else if (risk[i] == risk[j]) num += 0.5;
    }
  }
  if (pairs == 0) return std::nullopt;
  return num / static_cast<double>(pairs);
}

// ---------------------------------------------------------------------------
// Reports

struct EvaluationRow {
  double quantile = 0.0;
  double horizon = 0.0;
  std::optional<double> c_index;
  std::optional<double> brier;
  std::optional<double> auroc;
};

struct EvaluationReport {
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  std::string model_hash;
  std::vector<EvaluationRow> rows;
};

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string format_optional(const std::optional<double>& v) { return v ? format_number(*v) : "NA"; }

inline std::string report_csv(const EvaluationReport& r, bool header = true) {
  std::ostringstream out;
  if (header) out << "fold,quantile,horizon_time,c_index,brier,auroc\n";
  for (const auto& row : r.rows)
    out << r.fold << ',' << format_number(row.quantile) << ',' << format_number(row.horizon) << ','
        << format_optional(row.c_index) << ',' << format_optional(row.brier) << ',' << format_optional(row.auroc) << '\n';
  return out.str();
}

inline nlohmann::json report_json(const EvaluationReport& r) {
  const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"fold", r.fold},
                    {"quantile", row.quantile},
                    {"horizon_time", row.horizon},
                    {"c_index", opt(row.c_index)},
                    {"brier", opt(row.brier)},
                    {"auroc", opt(row.auroc)}});
  return {{"fold", r.fold}, {"seed", r.seed}, {"model_hash", r.model_hash}, {"rows", std::move(rows)}};
}

/// Metrics on the fold's test records at event-time quantile horizons of the
/// whole dataset. The censoring distribution is estimated on the fold's
/// training and validation records.
inline EvaluationReport evaluate(const AdhamModel& m, const Dataset& d, const FoldSplit& fold, std::span<const double> quantiles,
                                 int M, std::uint64_t seed) {
  if (fold.test.empty()) throw DataError("evaluate: test split is empty");
  if (d.feature_names != m.feature_names) throw DataError("evaluate: dataset columns differ from the model's features");
  const auto horizons = quantile_horizons(d, quantiles);

  std::vector<SurvivalRecord> test, seen;
  for (auto i : fold.test) test.push_back(d.records.at(i));
  for (auto i : fold.train) seen.push_back(d.records.at(i));
  for (auto i : fold.validation) seen.push_back(d.records.at(i));
  const CensoringEstimate G = km_censoring(seen.empty() ? test : seen);

  Matrix X(static_cast<diff::Index>(test.size()), static_cast<diff::Index>(m.D()));
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto z = m.stats.apply(test[i].x);
    for (std::size_t j = 0; j < z.size(); ++j) X(static_cast<diff::Index>(i), static_cast<diff::Index>(j)) = z[j];
  }
  std::vector<double> grid = horizons;
  std::sort(grid.begin(), grid.end());
  const Matrix S = survival_matrix(m, X, grid, M, seed);

  EvaluationReport r;
  r.fold = fold.fold;
  r.seed = seed;
  r.model_hash = model_hash(m);
  for (std::size_t q = 0; q < quantiles.size(); ++q) {
    const auto k = static_cast<diff::Index>(std::lower_bound(grid.begin(), grid.end(), horizons[q]) - grid.begin());
    std::vector<double> surv(test.size()), risk(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      surv[i] = S(static_cast<diff::Index>(i), k);
      risk[i] = 1.0 - surv[i];
    }
    EvaluationRow row;
    row.quantile = quantiles[q];
    row.horizon = horizons[q];
    try {
      row.c_index = c_index(risk, test, horizons[q], G);
    } catch (const NumericalError& e) {
      warn(std::string("c_index undefined: ") + e.what());
    }
    try {
      row.brier = brier(surv, test, horizons[q], G);
    } catch (const NumericalError& e) {
      warn(std::string("brier undefined: ") + e.what());
    }
    row.auroc = auroc(risk, test, horizons[q]);
    r.rows.push_back(row);
  }
  return r;
}

}  // namespace adham
