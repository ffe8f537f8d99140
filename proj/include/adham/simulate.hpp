#pragma once

// Sampling survival data from a given model: event times follow the model's
// marginal hazard, then independent exponential censoring and an
// administrative end of follow-up are applied.

#include <cmath>
#include <span>
#include <vector>

#include "adham/data.hpp"
#include "adham/model.hpp"

namespace adham {

struct SimulationOptions {
  double censoring_rate = 0.0;  // exponential censoring hazard, 0 = none
  double end_time = 1.0;        // administrative censoring time
  int grid = 2000;              // trapezoid steps used to invert the cumulative hazard
};

/// One record per covariate row (raw units). Event times are drawn by
/// inverting the trapezoid cumulative hazard on a uniform grid over
/// [0, end_time].
inline Dataset simulate(const AdhamModel& m, std::span<const std::vector<double>> covariates, const SimulationOptions& opt,
                        Rng& rng) {
  if (!(opt.end_time > 0.0) || opt.grid < 1 || opt.censoring_rate < 0.0) throw UsageError("invalid simulation options");
  Dataset d;
  d.feature_names = m.feature_names;
  std::vector<double> grid(static_cast<std::size_t>(opt.grid) + 1);
  for (std::size_t k = 0; k < grid.size(); ++k) grid[k] = opt.end_time * static_cast<double>(k) / opt.grid;
  for (const auto& raw : covariates) {
    const auto x = m.stats.apply(raw);
    const Vector rate = marginal_hazards(m, x, grid);
    const double target = -std::log(rng.uniform_open());
    double t = opt.end_time;
    int delta = 0;
    double H = 0.0;
    for (std::size_t k = 1; k < grid.size(); ++k) {
      const double step = 0.5 * (rate(static_cast<diff::Index>(k - 1)) + rate(static_cast<diff::Index>(k))) * (grid[k] - grid[k - 1]);
      if (H + step >= target) {
        t = grid[k - 1] + (grid[k] - grid[k - 1]) * (target - H) / step;
        delta = 1;
        break;
      }
      H += step;
    }
    if (opt.censoring_rate > 0.0) {
      const double c = -std::log(rng.uniform_open()) / opt.censoring_rate;
      if (c < t) {
        t = c;
        delta = 0;
      }
    }
    d.records.push_back({raw, t, delta});
  }
  return d;
}

}  // namespace adham
