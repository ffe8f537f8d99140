#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "adham/serialize.hpp"
#include "adham/simulate.hpp"
#include "adham/train.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"

using namespace adham;
using namespace fixtures;

namespace {

std::vector<SurvivalRecord> one_record(double t, int delta, std::size_t D = 1) {
  return {SurvivalRecord{std::vector<double>(D, 0.3), t, delta}};
}

AdhamModel single_hazard_model(HazardNet h, double time_scale = 1.0) {
  h.covariate = 0;
  return assemble(linear_assignment(Matrix::Zero(1, 1), Matrix::Zero(1, 1)), Matrix::Zero(1, 1), {std::move(h)}, time_scale);
}

// Two-subgroup model with one-hot assignments driven by the sign of x0.
AdhamModel sign_switch_model(const Matrix& logits, std::vector<HazardNet> hazards) {
  const auto D = static_cast<Index>(hazards.size());
  Matrix w = Matrix::Zero(D, 2);
  w(0, 0) = 1000.0;
  w(0, 1) = -1000.0;
  return assemble(linear_assignment(w, Matrix::Zero(1, 2)), logits, std::move(hazards));
}

}  // namespace

TEST(PopulationHazard, ZeroNetworkIsLog2) {
  const HazardNet h{diff::zero_network(hazard_architecture({})), 0};
  for (double t : {0.0, 0.5, 300.0})
    for (double x : {-3.0, 0.0, 2.5}) EXPECT_NEAR(population_hazard(h, t, x), std::log(2.0), 1e-15);
}

TEST(PopulationHazard, PureAndShared) {
  Rng rng(1);
  const AdhamModel m = random_model(3, 2, rng);
  EXPECT_EQ(population_hazard(m.hazards[1], 0.7, 0.2), population_hazard(m.hazards[1], 0.7, 0.2));
  // patients that agree on x_1 share lambda_1 whatever their other covariates
  std::vector<double> a{0.9, 0.2, -1.0}, b{-2.0, 0.2, 3.0};
  const double times[] = {0.1, 0.5, 1.5};
  const Matrix da = hazard_decomposition(m, a, times), db = hazard_decomposition(m, b, times);
  const Vector wa = covariate_weight(m, a), wb = covariate_weight(m, b);
  for (Index k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(da(k, 1) / wa(1), db(k, 1) / wb(1));
}

TEST(PopulationHazard, ErrorsAndScaling) {
  const HazardNet h = constant_hazard(2.0, 0);
  EXPECT_THROW(population_hazard(h, -1.0, 0.0), NumericalError);
  EXPECT_THROW(population_hazard(h, NAN, 0.0), NumericalError);
  EXPECT_THROW(population_hazard(h, 1.0, INFINITY), NumericalError);
  EXPECT_NEAR(population_hazard(h, 1.0, 0.0, 4.0), 0.5, 1e-12);
}

TEST(AssignmentProbs, ZeroHeadIsUniform) {
  Rng rng(2);
  AdhamModel m = make_model({7, 8, 2, true, false}, 3, rng);
  auto& p = m.assignment.params;
  p.tensors[p.head_index()].setZero();
  const Vector f = assignment_probs(m, std::vector<double>{1.0, -2.0, 0.5});
  for (Index c = 0; c < 7; ++c) EXPECT_NEAR(f(c), 1.0 / 7.0, 1e-15);
}

TEST(AssignmentProbs, SimplexAndWidth) {
  Rng rng(3);
  const AdhamModel m = make_model({}, 20, rng);
  EXPECT_EQ(m.C(), 100u);
  std::vector<double> x(20);
  for (int trial = 0; trial < 20; ++trial) {
    for (auto& v : x) v = 4.0 * rng.uniform() - 2.0;
    const Vector f = assignment_probs(m, x);
    ASSERT_EQ(f.size(), 100);
    EXPECT_NEAR(f.sum(), 1.0, 1e-12);
    EXPECT_GE(f.minCoeff(), 0.0);
    EXPECT_LE(f.maxCoeff(), 1.0);
  }
  EXPECT_THROW(assignment_probs(m, std::vector<double>(19)), UsageError);
}

TEST(CovariateWeight, SingleSubgroupIsTheRow) {
  Rng rng(4);
  AdhamModel m = random_model(4, 1, rng);
  const Vector w = covariate_weight(m, std::vector<double>{0.1, 0.2, 0.3, 0.4});
  const Matrix beta = m.importance.beta();
  for (Index d = 0; d < 4; ++d) EXPECT_DOUBLE_EQ(w(d), beta(0, d));
}

TEST(CovariateWeight, HardAssignmentAndSymmetricAverage) {
  Matrix logits(2, 2);
  logits << 400, -400, -400, 400;  // rows (1, 0) and (0, 1) to double precision
  AdhamModel m = sign_switch_model(logits, {constant_hazard(1.0, 0), constant_hazard(1.0, 1)});
  const Vector hi = covariate_weight(m, std::vector<double>{1.0, 0.0});
  const Vector lo = covariate_weight(m, std::vector<double>{-1.0, 0.0});
  EXPECT_EQ(hi(0), 1.0);
  EXPECT_EQ(hi(1), 0.0);
  EXPECT_EQ(lo(0), 0.0);
  EXPECT_EQ(lo(1), 1.0);
  const Vector mid = covariate_weight(m, std::vector<double>{0.0, 0.0});  // f = (0.5, 0.5)
  EXPECT_NEAR(mid(0), 0.5, 1e-15);
  EXPECT_NEAR(mid(1), 0.5, 1e-15);
}

TEST(MarginalHazard, ConvexCombination) {
  AdhamModel m = assemble(linear_assignment(Matrix::Zero(2, 1), Matrix::Zero(1, 1)), Matrix::Zero(1, 2),
                          {constant_hazard(2.0, 0), constant_hazard(4.0, 1)});
  EXPECT_NEAR(marginal_hazard(m, std::vector<double>{0.3, -1.0}, 0.8), 3.0, 1e-12);
}

TEST(MarginalHazard, SingleCovariateEqualsPopulationHazard) {
  Rng rng(5);
  AdhamModel m = random_model(1, 3, rng);
  for (double t : {0.0, 0.3, 1.7}) {
    const double x = 2.0 * rng.uniform() - 1.0;
    EXPECT_EQ(marginal_hazard(m, std::vector<double>{x}, t), population_hazard(m.hazards[0], t, x));
  }
}

TEST(MarginalHazard, MatchesDoubleSum) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t D = 1 + rng.below(5), C = 1 + rng.below(4);
    AdhamModel m = random_model(D, C, rng);
    m.time_scale = 0.5 + rng.uniform() * 3;
    std::vector<double> x(D);
    for (auto& v : x) v = 2.0 * rng.uniform() - 1.0;
    const double t = 3.0 * rng.uniform();
    const Vector f = assignment_probs(m, x);
    const Matrix beta = m.importance.beta();
    double expected = 0.0;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t d = 0; d < D; ++d)
        expected += beta(static_cast<Index>(c), static_cast<Index>(d)) * f(static_cast<Index>(c)) *
                    population_hazard(m.hazards[d], t, x[d], m.time_scale);
    const double got = marginal_hazard(m, x, t);
    EXPECT_NEAR(got, expected, 1e-10);
    EXPECT_GT(got, 0.0);
  }
}

TEST(HazardDecomposition, Identities) {
  Rng rng(7);
  AdhamModel m = random_model(4, 3, rng);
  const std::vector<double> x{0.2, -0.5, 1.0, 0.0};
  const std::vector<double> times{0.0, 0.1, 0.5, 1.0, 2.0};
  const Matrix parts = hazard_decomposition(m, x, times);
  for (std::size_t k = 0; k < times.size(); ++k) EXPECT_NEAR(parts.row(static_cast<Index>(k)).sum(), marginal_hazard(m, x, times[k]), 1e-10);

  m.importance.logits.col(2).setConstant(-800.0);  // covariate 2 gets zero weight in every subgroup
  const Matrix zeroed = hazard_decomposition(m, x, times);
  for (Index k = 0; k < zeroed.rows(); ++k) EXPECT_EQ(zeroed(k, 2), 0.0);
}

TEST(HazardDecomposition, UniformWeightsArithmetic) {
  AdhamModel m = assemble(linear_assignment(Matrix::Zero(3, 1), Matrix::Zero(1, 1)), Matrix::Zero(1, 3),
                          {constant_hazard(3.0, 0), constant_hazard(6.0, 1), constant_hazard(9.0, 2)});
  const double times[] = {0.5};
  const Matrix parts = hazard_decomposition(m, std::vector<double>{0, 0, 0}, times);
  EXPECT_NEAR(parts(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(parts(0, 1), 2.0, 1e-12);
  EXPECT_NEAR(parts(0, 2), 3.0, 1e-12);
}

TEST(McLoglik, ConstantHazardIsExact) {
  const double c = 1.7, t = 2.3;
  const AdhamModel m = single_hazard_model(constant_hazard(c, 0));
  for (int M : {1, 5, 64}) {
    Rng rng(M);
    EXPECT_NEAR(mc_loglik(m, one_record(t, 1), M, 1.0, rng), std::log(c) - c * t, 1e-12);
    EXPECT_NEAR(mc_loglik(m, one_record(t, 0), M, 1.0, rng), -c * t, 1e-12);
  }
}

TEST(McLoglik, TimeScaleIsInvisible) {
  // scaled-time rate 1.7 with scale 4 is a per-unit rate of 0.425
  const AdhamModel m = single_hazard_model(constant_hazard(1.7, 0), 4.0);
  Rng rng(0);
  EXPECT_NEAR(mc_loglik(m, one_record(2.3, 1), 8, 1.0, rng), std::log(0.425) - 0.425 * 2.3, 1e-12);
}

TEST(McLoglik, DatasetScaling) {
  const AdhamModel m = single_hazard_model(constant_hazard(0.5, 0));
  std::vector<SurvivalRecord> batch{{{0.0}, 1.0, 1}, {{0.0}, 3.0, 0}};
  Rng rng(0);
  const double per_batch = std::log(0.5) - 0.5 - 1.5;
  EXPECT_NEAR(mc_loglik(m, batch, 4, 10.0, rng), 10.0 / 2.0 * per_batch, 1e-12);
}

TEST(McLoglik, ZeroTimeRecordsContributeNothing) {
  const AdhamModel m = single_hazard_model(constant_hazard(0.5, 0));
  Rng rng(0);
  EXPECT_EQ(mc_loglik(m, one_record(0.0, 1), 4, 1.0, rng), 0.0);
  EXPECT_EQ(mc_loglik(m, one_record(0.0, 0), 4, 1.0, rng), 0.0);
}

TEST(McLoglik, LinearHazardMean) {
  const double a = 0.8, t = 1.6;
  const AdhamModel m = single_hazard_model(linear_time_hazard(a, 0));
  Rng rng(11);
  const int R = 10000;
  double sum = 0, sq = 0;
  for (int r = 0; r < R; ++r) {
    const double v = mc_loglik(m, one_record(t, 1), 4, 1.0, rng);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / R, se = std::sqrt((sq / R - mean * mean) / R);
  EXPECT_LT(std::abs(mean - (std::log(a * t) - a * t * t / 2)), 3 * se);
}

TEST(McLoglikD, ConstantDeterministicAndCollapse) {
  const HazardNet h = constant_hazard(0.9, 0);
  Rng r0(0);
  EXPECT_NEAR(mc_loglik_d(h, one_record(1.5, 1), 3, 1.0, r0), std::log(0.9) - 1.35, 1e-12);

  Rng gen(12);
  AdhamModel m = random_model(1, 1, gen);
  const auto batch = random_records(9, 1, gen);
  Rng a(5), b(5), c(5);
  const double v1 = mc_loglik_d(m.hazards[0], batch, 7, 100.0, a);
  EXPECT_EQ(v1, mc_loglik_d(m.hazards[0], batch, 7, 100.0, b));
  EXPECT_NEAR(v1, mc_loglik(m, batch, 7, 100.0, c), 1e-10 * std::abs(v1));
}

TEST(McLoglikD, NeverReadsAssignmentParameters) {
  Rng rng(13);
  AdhamModel m = random_model(3, 2, rng);
  const auto batch = random_records(6, 3, rng);
  Rng a(1);
  const double before = mc_loglik_d(m.hazards[2], batch, 5, 6.0, a);
  for (auto& t : m.assignment.params.tensors) t.array() += 0.7;
  m.importance.logits.array() *= -3.0;
  Rng b(1);
  EXPECT_EQ(before, mc_loglik_d(m.hazards[2], batch, 5, 6.0, b));
}

TEST(Regularizer, Examples) {
  Matrix logits(2, 2);
  logits << 400, -400, -400, 400;
  const AdhamModel m = sign_switch_model(logits, {constant_hazard(1.0, 0), constant_hazard(1.0, 1)});
  const std::vector<SurvivalRecord> opposite{{{1.0, 0.0}, 1.0, 1}, {{-1.0, 0.0}, 1.0, 1}};
  const std::vector<SurvivalRecord> same{{{1.0, 0.0}, 1.0, 1}, {{2.0, 0.0}, 1.0, 1}};
  EXPECT_NEAR(regularizer(m, opposite, {1.0, 0.0}), 0.0, 1e-15);
  EXPECT_NEAR(regularizer(m, same, {1.0, 0.0}), 1.0, 1e-15);

  const AdhamModel uniform = assemble(linear_assignment(Matrix::Zero(4, 3), Matrix::Zero(1, 3)), Matrix::Zero(3, 4),
                                      {constant_hazard(1, 0), constant_hazard(1, 1), constant_hazard(1, 2), constant_hazard(1, 3)});
  Rng rng(14);
  EXPECT_NEAR(regularizer(uniform, random_records(5, 4, rng), {0.0, 1.0}), -std::log(4.0), 1e-12);
  EXPECT_THROW(regularizer(uniform, random_records(1, 4, rng)), UsageError);
}

TEST(Regularizer, MatchesPairSum) {
  Rng rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t D = 1 + rng.below(4), C = 1 + rng.below(4), L = 2 + rng.below(6);
    const AdhamModel m = random_model(D, C, rng);
    const auto batch = random_records(L, D, rng);
    const Matrix F = assignment_matrix(m, rows_of(batch));
    const Matrix P = covariate_weight_matrix(m, rows_of(batch));
    double cross = 0.0, ent = 0.0;
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < L; ++j)
        if (i != j) cross += F.row(static_cast<Index>(i)).dot(F.row(static_cast<Index>(j)));
    for (Index i = 0; i < P.size(); ++i) ent += P(i) * std::log(P(i));
    const double Ld = static_cast<double>(L);
    EXPECT_NEAR(regularizer(m, batch, {0.7, 1.3}), 0.7 * cross / (Ld * (Ld - 1)) + 1.3 * ent / Ld, 1e-12);
  }
}

TEST(Gradients, CompositeLosses) {
  Rng rng(16);
  for (int draw = 0; draw < 5; ++draw) {
    const std::size_t D = 1 + rng.below(3), C = 1 + rng.below(3);
    AdhamModel m = random_model(D, C, rng, 3, 1 + static_cast<int>(rng.below(2)), draw % 2 == 0, draw % 3 == 0);
    m.time_scale = 1.5;
    const auto records = random_records(4, D, rng);
    Rng srng(draw);
    const LikelihoodBatch b = make_batch(records, 3, m.time_scale, srng);
    const std::vector<Matrix> flat = flatten(m);

    const auto full = [&](Tape& t, std::span<const Var> v) {
      (void)t;
      return mc_loglik_on_tape(m, model_vars(m, v), b, 10.0);
    };
    const auto reg = [&](Tape& t, std::span<const Var> v) {
      (void)t;
      const ModelVars mv = model_vars(m, v);
      Var f = assignment_on_tape(m, mv, b.X);
      return regularizer_on_tape(f, covariate_weights_on_tape(f, mv), {1.0, 1.0});
    };
    for (const auto& loss : {std::function<Var(Tape&, std::span<const Var>)>(full), std::function<Var(Tape&, std::span<const Var>)>(reg)}) {
      const auto [v, g] = diff::value_and_gradient(loss, std::span<const Matrix>(flat));
      const auto value = [&](const std::vector<Matrix>& q) {
        Tape t;
        std::vector<Var> vars;
        for (const auto& x : q) vars.push_back(t.constant(x));
        return loss(t, vars).scalar();
      };
      EXPECT_LT(gradcheck::compare(value, flat, g).worst, 1e-4);
    }
    for (std::size_t d = 0; d < D; ++d) {
      const auto& net = m.hazards[d].params;
      const auto loss_d = [&](Tape& t, std::span<const Var> v) {
        return mc_loglik_from_surface(hazard_surface(t, net.arch, v, b, d), b, 10.0);
      };
      const auto [v, g] = diff::value_and_gradient(loss_d, std::span<const Matrix>(net.tensors));
      const auto value = [&](const std::vector<Matrix>& q) {
        Tape t;
        std::vector<Var> vars;
        for (const auto& x : q) vars.push_back(t.constant(x));
        return loss_d(t, vars).scalar();
      };
      EXPECT_LT(gradcheck::compare(value, net.tensors, g).worst, 1e-4);
    }
  }
}

TEST(Serialization, RoundTripIsBitwise) {
  Rng rng(17);
  AdhamModel m = random_model(3, 4, rng, 5, 2, true, true);
  m.time_scale = 1.0 / 3.0;
  m.stats.mean = {0.1, 1.0 / 7.0, -2e-300};
  m.stats.std = {1.0, 3.3, 1e300};
  m.lineage.seed = ~std::uint64_t{0};
  m.lineage.split_seed = 12345;
  m.assignment.groups = {{0, 2}, {1}, {3}};
  m.importance.logits = random_matrix(3, 3, rng);
  const std::string text = model_to_string(m);
  const AdhamModel back = model_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(model_to_string(back), text);
  EXPECT_EQ(flatten(back).size(), flatten(m).size());
  for (std::size_t k = 0; k < flatten(m).size(); ++k) EXPECT_EQ(flatten(back)[k], flatten(m)[k]);
  EXPECT_EQ(back.stats.mean, m.stats.mean);
  EXPECT_EQ(back.time_scale, m.time_scale);
  EXPECT_EQ(back.assignment.groups, m.assignment.groups);
  EXPECT_EQ(back.lineage.seed, m.lineage.seed);
  EXPECT_EQ(back.lineage.split_seed, 12345u);
  EXPECT_EQ(model_hash(back), model_hash(m));
}

TEST(Serialization, Rejections) {
  Rng rng(18);
  auto j = model_to_json(random_model(2, 2, rng));
  auto wrong_version = j;
  wrong_version["version"] = 99;
  EXPECT_THROW(model_from_json(wrong_version), DataError);
  auto truncated = j;
  truncated["hazards"].erase(1);
  EXPECT_THROW(model_from_json(truncated), DataError);
  auto missing = j;
  missing.erase("time_scale");
  EXPECT_THROW(model_from_json(missing), DataError);
}

namespace {

Dataset toy_dataset(std::size_t n, std::uint64_t seed) {
  Matrix logits(2, 2);
  logits << 3, -3, -3, 3;
  AdhamModel gen = sign_switch_model(logits, {softplus_hazard(1.0, 0.0, -0.5, 0), softplus_hazard(-1.0, 0.5, 0.0, 1)});
  Rng rng(seed);
  std::vector<std::vector<double>> xs;
  for (std::size_t i = 0; i < n; ++i) xs.push_back({2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0});
  return simulate(gen, xs, {0.2, 4.0, 400}, rng);
}

TrainConfig quick_config() {
  TrainConfig c;
  c.batch_size = 64;
  c.importance_samples = 8;
  c.epochs = 6;
  c.learning_rate = 3e-3;
  c.seed = 21;
  return c;
}

}  // namespace

TEST(Fit, DeterministicAndImproves) {
  const Dataset d = toy_dataset(300, 1);
  const auto folds = split_folds(d, 5, 3);
  const ModelShape shape{3, 8, 2, true, false};
  const FitResult a = fit(d, folds[0], quick_config(), shape);
  const FitResult b = fit(d, folds[0], quick_config(), shape);
  EXPECT_EQ(model_to_string(a.model), model_to_string(b.model));
  ASSERT_EQ(a.history.size(), 6u);
  EXPECT_GT(a.history[a.best_epoch - 1].validation_loglik, a.history[0].validation_loglik - 1e-12);
  for (std::size_t e = 0; e < a.history.size(); ++e)
    EXPECT_LE(a.history[e].validation_loglik, a.history[a.best_epoch - 1].validation_loglik);
  EXPECT_EQ(a.stop_reason, "epochs");
  EXPECT_EQ(a.model.lineage.fold, 0u);
  EXPECT_EQ(a.model.lineage.folds, folds[0].folds);
  EXPECT_EQ(a.model.lineage.split_seed, folds[0].seed);
  EXPECT_EQ(a.model.feature_names, d.feature_names);

  double tmax = 0.0;
  for (auto i : folds[0].train) tmax = std::max(tmax, d.records[i].t);
  EXPECT_EQ(a.model.time_scale, tmax);

  TrainConfig longer = quick_config();
  longer.epochs = 40;
  const FitResult c = fit(d, folds[0], longer, shape);
  EXPECT_GT(c.history[c.best_epoch - 1].validation_loglik, c.history[0].validation_loglik);
}

TEST(Fit, OneBatchUpdatesHazardsAndMixture) {
  // a single batch moves every hazard network and the mixture parameters
  const Dataset d = toy_dataset(120, 2);
  const auto folds = split_folds(d, 5, 3);
  TrainConfig cfg = quick_config();
  cfg.epochs = 1;
  cfg.batch_size = 1000;
  const FitResult r = fit(d, folds[0], cfg, {2, 4, 1, true, false});
  Rng init = Rng(cfg.seed).split();
  const AdhamModel start = make_model({2, 4, 1, true, false}, 2, init);
  for (std::size_t dd = 0; dd < 2; ++dd) EXPECT_NE(r.model.hazards[dd].params.tensors[0], start.hazards[dd].params.tensors[0]);
  EXPECT_NE(r.model.importance.logits, start.importance.logits);
}

TEST(Fit, PopulationHazardIgnoresOtherCovariates) {
  const Dataset d = toy_dataset(200, 4);
  TrainConfig cfg = quick_config();
  cfg.epochs = 2;
  const FitResult r = fit(d, split_folds(d, 5, 1)[0], cfg, {2, 6, 2, true, false});
  std::vector<double> x{0.3, -0.4};
  const double times[] = {0.2, 1.0};
  const Matrix a = hazard_decomposition(r.model, x, times);
  const Vector wa = covariate_weight(r.model, x);
  x[0] = 5.0;
  const Matrix b = hazard_decomposition(r.model, x, times);
  const Vector wb = covariate_weight(r.model, x);
  EXPECT_EQ(a(0, 1) / wa(1), b(0, 1) / wb(1));
  EXPECT_EQ(population_hazard(r.model.hazards[1], 0.7, -0.4, r.model.time_scale),
            population_hazard(r.model.hazards[1], 0.7, -0.4, r.model.time_scale));
}

TEST(Fit, JointModeAndDropoutRun) {
  const Dataset d = toy_dataset(150, 5);
  TrainConfig cfg = quick_config();
  cfg.epochs = 2;
  cfg.joint = true;
  cfg.dropout = 0.15;
  const FitResult r = fit(d, split_folds(d, 5, 1)[0], cfg, {2, 6, 2, true, false});
  EXPECT_EQ(r.history.size(), 2u);
  EXPECT_TRUE(std::isfinite(r.history.back().validation_loglik));
}

TEST(Fit, Patience) {
  const Dataset d = toy_dataset(150, 6);
  TrainConfig cfg = quick_config();
  cfg.epochs = 200;
  cfg.patience = 1;
  cfg.learning_rate = 0.05;
  const FitResult r = fit(d, split_folds(d, 5, 1)[0], cfg, {2, 6, 2, true, false});
  EXPECT_EQ(r.stop_reason, "patience");
  EXPECT_EQ(r.history.size(), r.best_epoch + 1);
}

TEST(Fit, DivergenceNamesEpochAndBatch) {
  const Dataset d = toy_dataset(150, 7);
  TrainConfig cfg = quick_config();
  cfg.learning_rate = 1e300;
  try {
    fit(d, split_folds(d, 5, 1)[0], cfg, {2, 6, 2, true, false});
    FAIL() << "expected divergence";
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch"), std::string::npos) << msg;
  }
}

TEST(Fit, ConfigValidation) {
  const Dataset d = toy_dataset(50, 8);
  const auto fold = split_folds(d, 5, 1)[0];
  TrainConfig c = quick_config();
  c.batch_size = 1;
  EXPECT_THROW(fit(d, fold, c, {2, 4, 1, true, false}), UsageError);
  c = quick_config();
  c.importance_samples = 0;
  EXPECT_THROW(fit(d, fold, c, {2, 4, 1, true, false}), UsageError);
  c = quick_config();
  c.regularizer.entropy = -1;
  EXPECT_THROW(fit(d, fold, c, {2, 4, 1, true, false}), UsageError);
  FoldSplit empty = fold;
  empty.train.clear();
  EXPECT_THROW(fit(d, empty, quick_config(), {2, 4, 1, true, false}), DataError);
}

TEST(Simulate, RecoversConstantHazard) {
  const AdhamModel m = single_hazard_model(constant_hazard(0.5, 0));
  Rng rng(9);
  std::vector<std::vector<double>> xs(5000, std::vector<double>{0.0});
  const Dataset d = simulate(m, xs, {0.0, 100.0, 4000}, rng);
  double total = 0.0;
  for (const auto& r : d.records) total += r.t;
  EXPECT_NEAR(total / 5000.0, 2.0, 0.1);
}
