#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "adham/data.hpp"

using namespace adham;

namespace {

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return load_csv(in, "time", "event", "test.csv");
}

std::string load_error(const std::string& text) {
  try {
    parse(text);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

Dataset column(std::vector<double> values) {
  Dataset d;
  d.feature_names = {"a"};
  for (double v : values) d.records.push_back({{v}, 1.0, 1});
  return d;
}

}  // namespace

TEST(LoadCsv, ThreeRows) {
  const auto d = parse("age,hr,time,event\n60,80,5.5,1\n70,90,3,0\n55,70,10,1\n");
  EXPECT_EQ(d.n(), 3u);
  EXPECT_EQ(d.dim(), 2u);
  EXPECT_EQ(d.feature_names, (std::vector<std::string>{"age", "hr"}));
  EXPECT_DOUBLE_EQ(d.records[1].x[1], 90.0);
  EXPECT_DOUBLE_EQ(d.records[0].t, 5.5);
  EXPECT_EQ(d.records[1].delta, 0);
}

TEST(LoadCsv, ColumnsInFileOrderAroundTimeAndEvent) {
  const auto d = parse("time,b,event,a\n1,2,1,3\n");
  EXPECT_EQ(d.feature_names, (std::vector<std::string>{"b", "a"}));
  EXPECT_EQ(d.records[0].x, (std::vector<double>{2, 3}));
}

TEST(LoadCsv, InvalidEventIndicator) {
  const auto msg = load_error("a,time,event\n1,2,2\n");
  EXPECT_NE(msg.find("invalid event indicator"), std::string::npos) << msg;
  EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("'event'"), std::string::npos) << msg;
}

TEST(LoadCsv, MissingColumn) {
  const auto msg = load_error("a,time\n1,2\n");
  EXPECT_NE(msg.find("missing column 'event'"), std::string::npos) << msg;
}

TEST(LoadCsv, NonNumericCellNamesRowAndColumn) {
  const auto msg = load_error("a,b,time,event\n1,2,3,1\n4,abc,5,0\n");
  EXPECT_NE(msg.find("non-numeric"), std::string::npos) << msg;
  EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("'b'"), std::string::npos) << msg;
}

TEST(LoadCsv, MissingValueRejected) {
  EXPECT_NE(load_error("a,time,event\n,3,1\n").find("non-numeric"), std::string::npos);
  EXPECT_NE(load_error("a,time,event\nnan,3,1\n").find("non-numeric"), std::string::npos);
}

TEST(LoadCsv, NegativeTime) {
  EXPECT_NE(load_error("a,time,event\n1,-3,1\n").find("negative time"), std::string::npos);
}

TEST(LoadCsv, EmptyFile) {
  EXPECT_NE(load_error("").find("empty file"), std::string::npos);
  EXPECT_NE(load_error("a,time,event\n").find("no data rows"), std::string::npos);
}

TEST(LoadCsv, NeedsAnEvent) {
  EXPECT_NE(load_error("a,time,event\n1,3,0\n").find("no observed events"), std::string::npos);
}

TEST(LoadCsv, QuotedHeaderAndCrlf) {
  const auto d = parse("\"a\",\"time\",\"event\"\r\n1,2,1\r\n");
  EXPECT_EQ(d.n(), 1u);
  EXPECT_EQ(d.feature_names[0], "a");
}

TEST(LoadCsv, ZeroTimeWarns) {
  std::vector<std::string> seen;
  ScopedWarningHandler guard([&](const std::string& m) { seen.push_back(m); });
  const auto d = parse("a,time,event\n1,0,1\n2,3,1\n");
  EXPECT_EQ(d.n(), 2u);
  ASSERT_EQ(seen.size(), 1u);
  EXPECT_NE(seen[0].find("time 0"), std::string::npos);
}

TEST(LoadCsv, SupportShapedExport) {
  std::ostringstream text;
  for (int j = 0; j < 23; ++j) text << "x" << j << ',';
  text << "time,event\n";
  Rng rng(3);
  for (int i = 0; i < 8873; ++i) {
    for (int j = 0; j < 23; ++j) text << rng.uniform() << ',';
    text << 1 + rng.below(2000) << ',' << rng.below(2) << '\n';
  }
  const auto d = parse(text.str());
  EXPECT_EQ(d.n(), 8873u);
  EXPECT_EQ(d.dim(), 23u);
}

TEST(LoadCsv, ShippedSupportFile) {
  const auto d = load_csv(std::string(ADHAM_SOURCE_DIR) + "/data/support.csv", "time", "event");
  EXPECT_GT(d.n(), 8000u);
  EXPECT_GE(d.dim(), 14u);
  validate(d);
}

TEST(Standardize, TwoValues) {
  const auto [z, s] = standardize(column({1, 3}));
  EXPECT_DOUBLE_EQ(s.mean[0], 2.0);
  EXPECT_NEAR(s.std[0], std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(z.records[0].x[0], -1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(z.records[1].x[0], 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Standardize, SampleMomentsAndUntouchedTimes) {
  Dataset d;
  d.feature_names = {"a", "b"};
  Rng rng(11);
  for (int i = 0; i < 57; ++i) d.records.push_back({{rng.uniform() * 40 + 3, rng.uniform() - 7}, rng.uniform() * 9, static_cast<int>(rng.below(2))});
  const auto [z, s] = standardize(d);
  for (std::size_t j = 0; j < 2; ++j) {
    double m = 0, v = 0;
    for (const auto& r : z.records) m += r.x[j];
    m /= 57;
    for (const auto& r : z.records) v += (r.x[j] - m) * (r.x[j] - m);
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(v / 56), 1.0, 1e-9);
  }
  for (std::size_t i = 0; i < d.n(); ++i) {
    EXPECT_EQ(z.records[i].t, d.records[i].t);
    EXPECT_EQ(z.records[i].delta, d.records[i].delta);
    EXPECT_NEAR(s.restore(0, z.records[i].x[0]), d.records[i].x[0], 1e-12);
  }
}

TEST(Standardize, Idempotent) {
  const auto [z1, s1] = standardize(column({4, 8, 1, 9, 2}));
  const auto [z2, s2] = standardize(z1);
  for (std::size_t i = 0; i < z1.n(); ++i) EXPECT_NEAR(z1.records[i].x[0], z2.records[i].x[0], 1e-9);
  EXPECT_NEAR(s2.mean[0], 0.0, 1e-12);
  EXPECT_NEAR(s2.std[0], 1.0, 1e-12);
}

TEST(Standardize, ConstantColumn) {
  int warnings = 0;
  ScopedWarningHandler guard([&](const std::string&) { ++warnings; });
  const auto [z, s] = standardize(column({5, 5, 5}));
  EXPECT_EQ(s.std[0], 1.0);
  for (const auto& r : z.records) EXPECT_EQ(r.x[0], 0.0);
  EXPECT_EQ(warnings, 1);
}

TEST(Standardize, NeedsTwoRecords) { EXPECT_THROW(standardize(column({1})), DataError); }

TEST(SplitFolds, TenRecordsFiveFolds) {
  const auto folds = split_folds(10, 5, 0);
  ASSERT_EQ(folds.size(), 5u);
  std::set<std::size_t> tests;
  for (const auto& f : folds) {
    EXPECT_EQ(f.test.size(), 2u);
    EXPECT_EQ(f.folds, 5u);
    EXPECT_EQ(f.seed, 0u);
    for (auto i : f.test) EXPECT_TRUE(tests.insert(i).second);
  }
  EXPECT_EQ(tests.size(), 10u);
}

TEST(SplitFolds, PartitionAndProportions) {
  for (std::size_t n : {7u, 100u, 1234u}) {
    const auto folds = split_folds(n, 5, 42);
    for (const auto& f : folds) {
      std::vector<std::size_t> all;
      all.insert(all.end(), f.train.begin(), f.train.end());
      all.insert(all.end(), f.validation.begin(), f.validation.end());
      all.insert(all.end(), f.test.begin(), f.test.end());
      std::sort(all.begin(), all.end());
      ASSERT_EQ(all.size(), n);
      for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(all[i], i);
      const double rest = static_cast<double>(n - f.test.size());
      EXPECT_EQ(f.validation.size(), static_cast<std::size_t>(std::llround(0.3 * rest)));
    }
  }
}

TEST(SplitFolds, Deterministic) {
  const auto a = split_folds(500, 5, 9);
  const auto b = split_folds(500, 5, 9);
  const auto c = split_folds(500, 5, 10);
  for (std::size_t f = 0; f < 5; ++f) {
    EXPECT_EQ(a[f].train, b[f].train);
    EXPECT_EQ(a[f].validation, b[f].validation);
    EXPECT_EQ(a[f].test, b[f].test);
  }
  EXPECT_NE(a[0].test, c[0].test);
}

TEST(SplitFolds, SupportSizedTestFolds) {
  for (const auto& f : split_folds(8873, 5, 0)) EXPECT_TRUE(f.test.size() == 1775 || f.test.size() == 1774);
}

TEST(SplitFolds, Errors) {
  EXPECT_THROW(split_folds(4, 5, 0), UsageError);
  EXPECT_THROW(split_folds(10, 1, 0), UsageError);
}

TEST(QuantileHorizons, Examples) {
  Dataset d;
  d.feature_names = {"a"};
  for (double t : {1.0, 2.0, 3.0, 4.0}) d.records.push_back({{0.0}, t, 1});
  d.records.push_back({{0.0}, 100.0, 0});  // censored, ignored
  const double q[] = {0.5};
  EXPECT_DOUBLE_EQ(quantile_horizons(d, q)[0], 2.5);
  const double bad[] = {0.0};
  EXPECT_THROW(quantile_horizons(d, bad), UsageError);
  const double one[] = {1.0};
  EXPECT_THROW(quantile_horizons(d, one), UsageError);

  Dataset same;
  same.feature_names = {"a"};
  for (int i = 0; i < 5; ++i) same.records.push_back({{0.0}, 7.0, 1});
  const double qs[] = {0.1, 0.5, 0.93};
  for (double h : quantile_horizons(same, qs)) EXPECT_EQ(h, 7.0);
}

TEST(QuantileHorizons, NoEvents) {
  Dataset d;
  d.feature_names = {"a"};
  d.records.push_back({{0.0}, 3.0, 0});
  const double q[] = {0.5};
  EXPECT_THROW(quantile_horizons(d, q), DataError);
}

TEST(QuantileHorizons, MonotoneAndOrderInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Dataset d;
    d.feature_names = {"a"};
    const auto n = 1 + rng.below(40);
    for (std::uint64_t i = 0; i < n; ++i) d.records.push_back({{0.0}, rng.uniform() * 10, i == 0 ? 1 : static_cast<int>(rng.below(2))});
    std::vector<double> q;
    for (int k = 0; k < 6; ++k) q.push_back(0.01 + 0.98 * rng.uniform());
    std::sort(q.begin(), q.end());
    const auto h = quantile_horizons(d, q);
    for (std::size_t k = 1; k < h.size(); ++k) EXPECT_LE(h[k - 1], h[k]);
    Dataset shuffled = d;
    rng.shuffle(std::span<SurvivalRecord>(shuffled.records));
    EXPECT_EQ(quantile_horizons(shuffled, q), h);
  }
}
