#pragma once

// Central finite-difference oracle shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "adham/diff/tape.hpp"

namespace gradcheck {

using adham::diff::Matrix;

struct Result {
  double worst = 0.0;  // largest relative error over all coordinates
  std::size_t coordinates = 0;
};

// rounding noise on a zero derivative is about eps |f| / step
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

/// `value(params)` evaluates the loss; `analytic` is its claimed gradient.
inline Result compare(const std::function<double(const std::vector<Matrix>&)>& value, std::vector<Matrix> params,
                      const std::vector<Matrix>& analytic, double step = 1e-5) {
  Result r;
  const double floor = 1e-6 * std::max(1.0, std::abs(value(params)));
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Eigen::Index i = 0; i < params[k].size(); ++i) {
      const double saved = params[k](i);
      params[k](i) = saved + step;
      const double up = value(params);
      params[k](i) = saved - step;
      const double down = value(params);
      params[k](i) = saved;
      r.worst = std::max(r.worst, relative_error(analytic[k](i), (up - down) / (2.0 * step), floor));
      ++r.coordinates;
    }
  }
  return r;
}

}  // namespace gradcheck
