#pragma once

// Decoupled mini-batch training.
//
// Per batch: every hazard network takes one Adam step on its own
// per-covariate likelihood (all gradients are computed before any update),
// then the assignment network and the importance logits take one Adam step on
// the full likelihood minus the regularizer with the hazard networks frozen.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "adham/data.hpp"
#include "adham/model.hpp"

namespace adham {

struct TrainConfig {
  std::size_t batch_size = 512;
  int importance_samples = 64;
  double learning_rate = 1e-3;
  std::size_t epochs = 4000;
  double dropout = 0.0;
  RegularizerWeights regularizer;
  std::size_t patience = 0;  // epochs without validation improvement before stopping; 0 runs every epoch
  double max_seconds = 0.0;  // wall-clock cap, 0 = none; timing-dependent epoch count
  std::uint64_t seed = 0;
  bool joint = false;  // debug: one joint step on all parameters instead of the two phases
};

inline void check_config(const TrainConfig& c) {
  if (c.batch_size < 2) throw UsageError("batch size must be at least 2");
  if (c.importance_samples < 1) throw UsageError("importance samples must be at least 1");
  if (!(c.learning_rate > 0.0)) throw UsageError("learning rate must be positive");
  if (c.epochs < 1) throw UsageError("epochs must be at least 1");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw UsageError("dropout must lie in [0, 1)");
  if (!(c.regularizer.orthogonality >= 0.0) || !(c.regularizer.entropy >= 0.0))
    throw UsageError("regularizer weights must be nonnegative");
  if (c.max_seconds < 0.0) throw UsageError("max_seconds must be nonnegative");
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loglik = 0.0;       // mean per-record estimate over the epoch's batches
  double validation_loglik = 0.0;  // mean per-record estimate on the validation set
  double seconds = 0.0;
};

struct FitResult {
  AdhamModel model;  // best validation snapshot
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::string stop_reason;
};

namespace detail {

inline void tune_allocator() {
#if defined(__GLIBC__)
  // Large activation buffers are allocated and freed every step; keeping them
  // off mmap avoids page-fault churn.
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

inline std::vector<SurvivalRecord> gather(const Dataset& d, std::span<const std::size_t> idx) {
  std::vector<SurvivalRecord> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(d.records.at(i));
  return out;
}

inline std::vector<SurvivalRecord> standardized(const AdhamModel& m, std::span<const SurvivalRecord> raw) {
  std::vector<SurvivalRecord> out(raw.begin(), raw.end());
  for (auto& r : out) {
    if (r.x.size() != m.D()) throw DataError("record width differs from the model's D");
    r.x = m.stats.apply(r.x);
  }
  return out;
}

}  // namespace detail

/// Training seed of one fold, derived from the run's master seed.
inline std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) {
  return Rng::splitmix64(seed ^ (0x632be59bd9b4e019ULL * (fold + 1)));
}

/// Sum over `records` (raw covariates) of the per-record likelihood estimate,
/// evaluated in chunks with the given seed and no dropout.
inline double dataset_loglik(const AdhamModel& m, std::span<const SurvivalRecord> records, int M, std::uint64_t seed,
                             std::size_t chunk = 512) {
  const auto z = detail::standardized(m, records);
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t lo = 0; lo < z.size(); lo += chunk) {
    const std::size_t hi = std::min(z.size(), lo + chunk);
    const std::span<const SurvivalRecord> part(z.data() + lo, hi - lo);
    total += mc_loglik(m, part, M, static_cast<double>(part.size()), rng);
  }
  return total;
}

/// Runs the decoupled training loop on `fold.train`, keeping the snapshot with
/// the best validation likelihood. Covariates are standardized with statistics
/// of the training and validation records; time is scaled by the largest
/// training time.
inline FitResult fit(const Dataset& data, const FoldSplit& fold, const TrainConfig& cfg, const ModelShape& shape,
                     const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  check_config(cfg);
  validate(data);
  if (fold.train.empty()) throw DataError("training split is empty");
  if (std::none_of(fold.train.begin(), fold.train.end(), [&](std::size_t i) { return data.records.at(i).delta == 1; }))
    throw DataError("training split has no observed events");
  detail::tune_allocator();

  std::vector<std::size_t> fit_idx = fold.train;
  fit_idx.insert(fit_idx.end(), fold.validation.begin(), fold.validation.end());
  const StandardizationStats stats = fit_idx.size() >= 2 ? standardize(data.subset(fit_idx)).second
                                                          : StandardizationStats{std::vector<double>(data.dim(), 0.0),
                                                                                 std::vector<double>(data.dim(), 1.0)};
  double time_scale = 0.0;
  for (auto i : fold.train) time_scale = std::max(time_scale, data.records[i].t);
  if (!(time_scale > 0.0)) throw DataError("all training times are zero");

  const Dataset z = apply_standardization(data, stats);
  const auto val_raw = detail::gather(data, fold.validation);

  Rng master(cfg.seed);
  Rng init_rng = master.split();
  Rng order_rng = master.split();
  Rng sample_rng = master.split();
  Rng dropout_rng = master.split();
  const std::uint64_t val_seed = master.next_u64();

  AdhamModel m = make_model(shape, data.dim(), init_rng);
  m.stats = stats;
  m.feature_names = data.feature_names;
  m.time_scale = time_scale;
  m.lineage.fold = fold.fold;
  m.lineage.folds = fold.folds;
  m.lineage.seed = cfg.seed;
  m.lineage.split_seed = fold.seed;
  m.lineage.original_c = shape.C;

  const double N = static_cast<double>(fold.train.size());
  const int M = cfg.importance_samples;
  const diff::ForwardOptions train_opts{true, cfg.dropout, &dropout_rng};

  std::vector<diff::AdamState> hazard_adam;
  for (const auto& h : m.hazards) hazard_adam.push_back(diff::AdamState::for_params(h.params.tensors, cfg.learning_rate));
  std::vector<Matrix> mixture = m.assignment.params.tensors;
  mixture.push_back(m.importance.logits);
  diff::AdamState mixture_adam = diff::AdamState::for_params(mixture, cfg.learning_rate);
  diff::AdamState joint_adam;
  if (cfg.joint) joint_adam = diff::AdamState::for_params(flatten(m), cfg.learning_rate);

  FitResult result;
  result.model = m;
  double best = -std::numeric_limits<double>::infinity();
  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  std::vector<std::size_t> order = fold.train;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double train_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      if (hi - lo < 2) break;
      const auto where = " (epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches + 1) + ")";
      try {
        const auto records = detail::gather(z, std::span<const std::size_t>(order.data() + lo, hi - lo));
        const LikelihoodBatch b = make_batch(records, M, time_scale, sample_rng);

        if (cfg.joint) {
          Tape tape;
          const ModelVars v = bind_model(tape, m, {true, true, true});
          std::vector<Var> surfaces;
          for (std::size_t d = 0; d < m.D(); ++d)
            surfaces.push_back(hazard_surface(tape, m.hazards[d].params.arch, v.hazards[d], b, d, train_opts));
          Var f = assignment_on_tape(m, v, b.X, train_opts);
          Var w = covariate_weights_on_tape(f, v);
          Var ll = mc_loglik_on_tape(w, surfaces, b, N);
          Var loss = diff::sub(regularizer_on_tape(f, w, cfg.regularizer), ll);
          train_sum += ll.scalar();
          if (!std::isfinite(loss.scalar())) throw NumericalError("non-finite loss");
          tape.backward(loss);
          std::vector<Matrix> grads;
          for (Var x : v.assignment) grads.push_back(tape.grad(x));
          grads.push_back(tape.grad(v.beta_logits));
          for (const auto& hv : v.hazards)
            for (Var x : hv) grads.push_back(tape.grad(x));
          std::vector<Matrix> params = flatten(m);
          diff::adam_update(joint_adam, params, grads);
          unflatten(m, params);
        } else {
          // phase 1
          std::vector<std::vector<Matrix>> grads(m.D());
          for (std::size_t d = 0; d < m.D(); ++d) {
            Tape tape;
            const auto params = diff::bind(tape, m.hazards[d].params, true);
            Var ll = mc_loglik_from_surface(hazard_surface(tape, m.hazards[d].params.arch, params, b, d, train_opts), b, N);
            if (!std::isfinite(ll.scalar())) throw NumericalError("non-finite hazard likelihood for covariate " + std::to_string(d));
            Var loss = diff::scale(ll, -1.0);
            tape.backward(loss);
            for (Var p : params) grads[d].push_back(tape.grad(p));
          }
          for (std::size_t d = 0; d < m.D(); ++d) diff::adam_update(hazard_adam[d], m.hazards[d].params.tensors, grads[d]);

          // phase 2
          std::vector<Matrix> fixed = hazard_surfaces(m, b, train_opts);
          Tape tape;
          const ModelVars v = bind_model(tape, m, {true, true, false});
          std::vector<Var> surfaces;
          for (auto& s : fixed) surfaces.push_back(tape.constant(std::move(s)));
          Var f = assignment_on_tape(m, v, b.X, train_opts);
          Var w = covariate_weights_on_tape(f, v);
          Var ll = mc_loglik_on_tape(w, surfaces, b, N);
          Var loss = diff::sub(regularizer_on_tape(f, w, cfg.regularizer), ll);
          if (!std::isfinite(loss.scalar())) throw NumericalError("non-finite mixture loss");
          train_sum += ll.scalar();
          tape.backward(loss);
          std::vector<Matrix> g;
          for (Var x : v.assignment) g.push_back(tape.grad(x));
          g.push_back(tape.grad(v.beta_logits));
          mixture = m.assignment.params.tensors;
          mixture.push_back(m.importance.logits);
          diff::adam_update(mixture_adam, mixture, g);
          std::move(mixture.begin(), mixture.end() - 1, m.assignment.params.tensors.begin());
          m.importance.logits = std::move(mixture.back());
        }
      } catch (const NumericalError& e) {
        throw NumericalError(std::string("training diverged") + where + ": " + e.what());
      }
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loglik = batches ? train_sum / static_cast<double>(batches) / N : 0.0;
    if (!val_raw.empty()) {
      try {
        rec.validation_loglik = dataset_loglik(m, val_raw, M, val_seed) / static_cast<double>(val_raw.size());
      } catch (const NumericalError& e) {
        throw NumericalError("validation diverged (epoch " + std::to_string(epoch) + "): " + e.what());
      }
    } else {
      rec.validation_loglik = rec.train_loglik;
    }
    rec.seconds = elapsed();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.validation_loglik > best) {
      best = rec.validation_loglik;
      result.best_epoch = epoch;
      result.model = m;
    }
    if (cfg.patience > 0 && epoch - result.best_epoch >= cfg.patience) {
      result.stop_reason = "patience";
      return result;
    }
    // stop when another epoch of average length would cross the cap
    if (cfg.max_seconds > 0.0 && rec.seconds * (1.0 + 1.0 / static_cast<double>(epoch)) > cfg.max_seconds) {
      result.stop_reason = "time budget";
      return result;
    }
  }
  result.stop_reason = "epochs";
  return result;
}

}  // namespace adham
