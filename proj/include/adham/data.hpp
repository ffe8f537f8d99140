#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "adham/error.hpp"
#include "adham/log.hpp"
#include "adham/rng.hpp"

namespace adham {

/// One patient: covariates, event-or-censoring time and event indicator.
struct SurvivalRecord {
  std::vector<double> x;
  double t = 0.0;
  int delta = 0;  // 1 = event observed, 0 = right-censored
};

struct Dataset {
  std::vector<SurvivalRecord> records;
  std::vector<std::string> feature_names;

  std::size_t n() const { return records.size(); }
  std::size_t dim() const { return feature_names.size(); }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.feature_names = feature_names;
    out.records.reserve(idx.size());
    for (auto i : idx) out.records.push_back(records.at(i));
    return out;
  }
};

struct StandardizationStats {
  std::vector<double> mean;
  std::vector<double> std;

  std::vector<double> apply(std::span<const double> raw) const {
    std::vector<double> z(raw.size());
    for (std::size_t d = 0; d < raw.size(); ++d) z[d] = (raw[d] - mean[d]) / std[d];
    return z;
  }
  double restore(std::size_t d, double z) const { return z * std[d] + mean[d]; }
};

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  std::size_t folds = 0;
};

/// Checks the Dataset invariants; throws DataError on the first violation.
inline void validate(const Dataset& d) {
  bool any_event = false;
  for (std::size_t i = 0; i < d.n(); ++i) {
    const auto& r = d.records[i];
    if (r.x.size() != d.dim())
      throw DataError("record " + std::to_string(i) + " has " + std::to_string(r.x.size()) + " covariates, expected " +
                      std::to_string(d.dim()));
    if (!std::isfinite(r.t) || r.t < 0.0) throw DataError("record " + std::to_string(i) + ": invalid time");
    if (r.delta != 0 && r.delta != 1) throw DataError("record " + std::to_string(i) + ": invalid event indicator");
    for (double v : r.x)
      if (!std::isfinite(v)) throw DataError("record " + std::to_string(i) + ": non-finite covariate");
    any_event = any_event || r.delta == 1;
  }
  if (!any_event) throw DataError("dataset has no observed events");
}

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(std::move(cur));
  for (auto& s : cells) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    s = b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  }
  return cells;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last && std::isfinite(out);
}

}  // namespace detail

/// Reads a header-first CSV. Every column other than the time and event
/// columns becomes a covariate, in file order.
inline Dataset load_csv(std::istream& in, const std::string& time_column, const std::string& event_column,
                        const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line) || line.find_first_not_of(" \t\r") == std::string::npos)
    throw DataError(source + ": empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM

  const auto header = detail::split_csv_line(line);
  const auto find_col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(source + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t tcol = find_col(time_column);
  const std::size_t ecol = find_col(event_column);

  Dataset d;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == tcol || c == ecol) continue;
    feature_cols.push_back(c);
    d.feature_names.push_back(header[c]);
  }

  std::size_t row = 1;
  std::size_t zero_times = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv_line(line);
    const auto where = [&](std::size_t c) { return source + ": row " + std::to_string(row) + ", column '" + header[c] + "'"; };
    if (cells.size() != header.size())
      throw DataError(source + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    SurvivalRecord r;
    double v = 0.0;
    if (!detail::parse_double(cells[tcol], v)) throw DataError(where(tcol) + ": non-numeric cell '" + cells[tcol] + "'");
    if (v < 0.0) throw DataError(where(tcol) + ": negative time");
    r.t = v;
    if (!detail::parse_double(cells[ecol], v)) throw DataError(where(ecol) + ": non-numeric cell '" + cells[ecol] + "'");
    if (v != 0.0 && v != 1.0) throw DataError(where(ecol) + ": invalid event indicator '" + cells[ecol] + "'");
    r.delta = static_cast<int>(v);
    r.x.reserve(feature_cols.size());
    for (auto c : feature_cols) {
      if (!detail::parse_double(cells[c], v)) throw DataError(where(c) + ": non-numeric cell '" + cells[c] + "'");
      r.x.push_back(v);
    }
    if (r.t == 0.0) ++zero_times;
    d.records.push_back(std::move(r));
  }
  if (d.records.empty()) throw DataError(source + ": no data rows");
  if (zero_times > 0)
    warn(source + ": " + std::to_string(zero_times) + " record(s) with time 0 contribute nothing to the likelihood");
  if (std::none_of(d.records.begin(), d.records.end(), [](const auto& r) { return r.delta == 1; }))
    throw DataError(source + ": no observed events");
  return d;
}

inline Dataset load_csv(const std::string& path, const std::string& time_column, const std::string& event_column) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return load_csv(in, time_column, event_column, path);
}

/// Column-wise z-scoring with the n-1 standard deviation. Constant columns get
/// std = 1 (and therefore map to zeros).
inline std::pair<Dataset, StandardizationStats> standardize(const Dataset& d) {
  if (d.n() < 2) throw DataError("standardize needs at least two records");
  const std::size_t D = d.dim();
  const double n = static_cast<double>(d.n());
  StandardizationStats s{std::vector<double>(D, 0.0), std::vector<double>(D, 0.0)};
  for (const auto& r : d.records)
    for (std::size_t j = 0; j < D; ++j) s.mean[j] += r.x[j];
  for (auto& m : s.mean) m /= n;
  for (const auto& r : d.records)
    for (std::size_t j = 0; j < D; ++j) s.std[j] += (r.x[j] - s.mean[j]) * (r.x[j] - s.mean[j]);
  for (std::size_t j = 0; j < D; ++j) {
    s.std[j] = std::sqrt(s.std[j] / (n - 1.0));
    if (!(s.std[j] > 0.0)) {
      warn("column '" + d.feature_names[j] + "' is constant; std set to 1");
      s.std[j] = 1.0;
    }
  }
  Dataset out = d;
  for (auto& r : out.records) r.x = s.apply(r.x);
  return {std::move(out), std::move(s)};
}

inline Dataset apply_standardization(const Dataset& d, const StandardizationStats& s) {
  if (s.mean.size() != d.dim()) throw DataError("standardization stats do not match dataset width");
  Dataset out = d;
  for (auto& r : out.records) r.x = s.apply(r.x);
  return out;
}

/// k-fold splits. Indices 0..n-1 are Fisher-Yates shuffled with an
/// mt19937_64 stream keyed by `seed` and dealt round-robin into k test folds;
/// the remainder of each fold is shuffled again (stream keyed by seed and fold)
/// and its first 30% (rounded) becomes validation.
inline std::vector<FoldSplit> split_folds(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw UsageError("split_folds: k must be at least 2");
  if (k > n) throw UsageError("split_folds: k = " + std::to_string(k) + " exceeds n = " + std::to_string(n));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(perm));

  std::vector<FoldSplit> folds(k);
  std::vector<std::size_t> owner(n);
  for (std::size_t p = 0; p < n; ++p) owner[perm[p]] = p % k;
  for (std::size_t f = 0; f < k; ++f) {
    auto& split = folds[f];
    split.seed = seed;
    split.fold = f;
    split.folds = k;
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i) (owner[i] == f ? split.test : rest).push_back(i);
    Rng fold_rng(seed * 1000003ULL + f + 1);
    fold_rng.shuffle(std::span<std::size_t>(rest));
    const auto n_val = static_cast<std::size_t>(std::llround(0.3 * static_cast<double>(rest.size())));
    split.validation.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
    std::sort(split.validation.begin(), split.validation.end());
    std::sort(split.train.begin(), split.train.end());
  }
  return folds;
}

inline std::vector<FoldSplit> split_folds(const Dataset& d, std::size_t k, std::uint64_t seed) {
  return split_folds(d.n(), k, seed);
}

/// Linearly interpolated empirical quantile of a sorted sample (the
/// (n-1)q order-statistic convention).
inline double interpolated_quantile(std::span<const double> sorted, double q) {
  const double h = static_cast<double>(sorted.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Quantiles of the uncensored event times.
inline std::vector<double> quantile_horizons(const Dataset& d, std::span<const double> quantiles) {
  std::vector<double> times;
  for (const auto& r : d.records)
    if (r.delta == 1) times.push_back(r.t);
  if (times.empty()) throw DataError("quantile_horizons: no uncensored records");
  std::sort(times.begin(), times.end());
  std::vector<double> out;
  out.reserve(quantiles.size());
  for (double q : quantiles) {
    if (!(q > 0.0 && q < 1.0)) throw UsageError("quantile must lie in (0, 1), got " + std::to_string(q));
    out.push_back(interpolated_quantile(times, q));
  }
  return out;
}

}  // namespace adham
