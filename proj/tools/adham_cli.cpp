// adham: train, evaluate, refine and export mixture-of-additive-hazards
// survival models.
//
//   adham train    --data d.csv --time time --event event --out runs/a
//   adham evaluate --data d.csv --time time --event event --models runs/a/model_fold*.json --out runs/a/eval
//   adham refine   --model runs/a/model_fold0.json --threshold 0.65 --out runs/a/refined
//   adham export   --model runs/a/model_fold0.json --data d.csv --time time --event event --patients 0,5 --out fig
//
// Every subcommand accepts --config FILE with key=value lines; flags given on
// the command line win. Exit codes: 0 ok, 1 usage, 2 data, 3 numerical.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "adham/metrics.hpp"
#include "adham/refinement.hpp"
#include "adham/serialize.hpp"
#include "adham/train.hpp"

namespace fs = std::filesystem;
using namespace adham;

namespace {

constexpr int exit_usage = 1;
constexpr int exit_data = 2;
constexpr int exit_numerical = 3;

// ---------------------------------------------------------------------------
// config file

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(row) + ": expected key=value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    out.emplace_back(key, value);
  }
  return out;
}

/// Appends `--key=value` for every config entry whose flag is absent from the
/// command line, so CLI11 parses and validates both sources the same way.
std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  const auto given = [&](const std::string& key) {
    const std::string flag = "--" + key;
    return std::any_of(args.begin(), args.end(), [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  std::vector<std::string> extra;
  for (const auto& [key, value] : read_config(path))
    if (key != "config" && !value.empty() && !given(key)) extra.push_back("--" + key + "=" + value);
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

// ---------------------------------------------------------------------------
// output directory

class Output {
 public:
  Output(const std::string& dir, std::string command) : dir_(dir), command_(std::move(command)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) throw DataError("cannot create output directory '" + dir + "'");
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) {
    std::ofstream out(path(name), std::ios::binary);
    out << text;
    if (!out) throw DataError("failed writing '" + path(name) + "'");
    note(name);
  }

  void note(const std::string& name) {
    if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
  }

  /// manifest.txt: one line per produced file with its size in bytes.
  void finish() {
    std::ostringstream m;
    m << "# adham " << command_ << '\n';
    for (const auto& f : files_) m << f << '\t' << fs::file_size(dir_ / f) << '\n';
    std::ofstream out(path("manifest.txt"));
    out << m.str();
    if (!out) throw DataError("failed writing the manifest");
  }

 private:
  fs::path dir_;
  std::string command_;
  std::vector<std::string> files_;
};

using Settings = std::vector<std::pair<std::string, std::string>>;

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_number(v[i]);
  return s;
}

template <class T>
std::string join_int(const std::vector<T>& v, const char* sep = ",") {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + std::to_string(v[i]);
  return s;
}

std::string settings_text(const Settings& s) {
  std::string out;
  for (const auto& [k, v] : s) out += k + "=" + v + "\n";
  return out;
}

std::string file_safe(std::string name) {
  for (auto& c : name)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) c = '_';
  return name;
}

std::string matrix_csv(const Matrix& m, const std::vector<std::string>& columns, const std::string& row_label) {
  std::ostringstream out;
  out << row_label;
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (diff::Index r = 0; r < m.rows(); ++r) {
    out << r;
    for (diff::Index c = 0; c < m.cols(); ++c) out << ',' << format_number(m(r, c));
    out << '\n';
  }
  return out.str();
}

std::vector<std::string> numbered(std::size_t n, const std::string& prefix = "") {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

// ---------------------------------------------------------------------------
// shared data plumbing

struct DataArgs {
  std::string path;
  std::string time = "time";
  std::string event;

  void add(CLI::App* app, bool required) {
    auto* d = app->add_option("--data", path, "CSV file with a header row");
    app->add_option("--time", time, "time column")->capture_default_str();
    auto* e = app->add_option("--event", event, "event column (1 = event, 0 = censored)");
    if (required) {
      d->required();
      e->required();
    } else {
      e->needs(d);
      d->needs(e);
    }
  }
  bool given() const { return !path.empty(); }
  Dataset load() const {
    Dataset d = load_csv(path, time, event);
    validate(d);
    return d;
  }
};

/// Lists every column that differs between the model and the dataset.
void check_columns(const AdhamModel& m, const Dataset& d, const std::string& model_name) {
  if (m.feature_names == d.feature_names) return;
  std::ostringstream msg;
  msg << "dataset columns do not match model '" << model_name << "':";
  const std::size_t n = std::max(m.feature_names.size(), d.feature_names.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::string a = i < m.feature_names.size() ? m.feature_names[i] : "<none>";
    const std::string b = i < d.feature_names.size() ? d.feature_names[i] : "<none>";
    if (a != b) msg << "\n  column " << i << ": model has '" << a << "', data has '" << b << "'";
  }
  throw DataError(msg.str());
}

FoldSplit model_fold(const AdhamModel& m, const Dataset& d) {
  if (m.lineage.folds < 2) throw DataError("model carries no fold lineage");
  if (m.lineage.fold >= m.lineage.folds) throw DataError("model fold index out of range");
  return split_folds(d, m.lineage.folds, m.lineage.split_seed).at(m.lineage.fold);
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  DataArgs data;
  std::string out;
  std::size_t C = 100;
  int hidden = 100;
  int depth = 3;
  bool layer_norm = true;
  bool add_const = false;
  TrainConfig cfg;
  std::size_t folds = 5;
  std::vector<std::size_t> only;
  std::uint64_t seed = 0;
  std::size_t progress = 10;

  Settings settings() const {
    return {{"data", data.path},
            {"time", data.time},
            {"event", data.event},
            {"out", out},
            {"c", std::to_string(C)},
            {"hidden", std::to_string(hidden)},
            {"depth", std::to_string(depth)},
            {"layer-norm", layer_norm ? "true" : "false"},
            {"add-const", add_const ? "true" : "false"},
            {"epochs", std::to_string(cfg.epochs)},
            {"batch-size", std::to_string(cfg.batch_size)},
            {"samples", std::to_string(cfg.importance_samples)},
            {"learning-rate", format_number(cfg.learning_rate)},
            {"dropout", format_number(cfg.dropout)},
            {"orthogonality", format_number(cfg.regularizer.orthogonality)},
            {"entropy", format_number(cfg.regularizer.entropy)},
            {"patience", std::to_string(cfg.patience)},
            {"max-seconds", format_number(cfg.max_seconds)},
            {"joint", cfg.joint ? "true" : "false"},
            {"folds", std::to_string(folds)},
            {"only-folds", join_int(only)},
            {"seed", std::to_string(seed)},
            {"progress", std::to_string(progress)}};
  }
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* s = app.add_subcommand("train", "train one model per cross-validation fold");
  s->add_option("--config", "key=value file; command-line flags win");
  a.data.add(s, true);
  s->add_option("--out", a.out, "output directory")->required();
  s->add_option("--c", a.C, "number of latent subgroups")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--hidden", a.hidden, "hidden layer width")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--depth", a.depth, "hidden layers per network")->capture_default_str()->check(CLI::NonNegativeNumber);
  s->add_option("--layer-norm", a.layer_norm, "layer normalization after each hidden layer")->capture_default_str();
  s->add_option("--add-const", a.add_const, "learnable constant added to each hazard head")->capture_default_str();
  s->add_option("--epochs", a.cfg.epochs)->capture_default_str();
  s->add_option("--batch-size", a.cfg.batch_size)->capture_default_str();
  s->add_option("--samples", a.cfg.importance_samples, "Monte Carlo time samples per record")->capture_default_str();
  s->add_option("--learning-rate", a.cfg.learning_rate)->capture_default_str();
  s->add_option("--dropout", a.cfg.dropout)->capture_default_str();
  s->add_option("--orthogonality", a.cfg.regularizer.orthogonality, "assignment orthogonality weight")->capture_default_str();
  s->add_option("--entropy", a.cfg.regularizer.entropy, "covariate weight entropy weight")->capture_default_str();
  s->add_option("--patience", a.cfg.patience, "early stopping patience in epochs, 0 = off")->capture_default_str();
  s->add_option("--max-seconds", a.cfg.max_seconds, "wall-clock cap per fold, 0 = none")->capture_default_str();
  s->add_option("--joint", a.cfg.joint, "single joint update instead of the two phases (debugging)")->capture_default_str();
  s->add_option("--folds", a.folds, "number of cross-validation folds")->capture_default_str();
  s->add_option("--only-folds", a.only, "train only these folds")->delimiter(',');
  s->add_option("--seed", a.seed)->capture_default_str();
  s->add_option("--progress", a.progress, "print every n-th epoch, 0 = quiet")->capture_default_str();
}

int run_train(const TrainArgs& a) {
  check_config([&] {
    TrainConfig c = a.cfg;
    c.seed = a.seed;
    return c;
  }());
  const Dataset d = a.data.load();
  const auto splits = split_folds(d, a.folds, a.seed);
  std::vector<std::size_t> chosen = a.only;
  if (chosen.empty())
    for (std::size_t f = 0; f < a.folds; ++f) chosen.push_back(f);
  for (auto f : chosen)
    if (f >= a.folds) throw UsageError("fold " + std::to_string(f) + " does not exist with --folds " + std::to_string(a.folds));

  Output out(a.out, "train");
  const Settings settings = a.settings();
  out.write("config.txt", settings_text(settings));

  std::ofstream log(out.path("train_log.csv"));
  for (const auto& [k, v] : settings) log << "# " << k << '=' << v << '\n';
  log << "fold,epoch,train_loglik,validation_loglik,seconds\n";
  std::ostringstream summary;
  summary << "fold,best_epoch,epochs_run,stop_reason,best_validation_loglik,model_file,model_hash\n";

  const ModelShape shape{a.C, a.hidden, a.depth, a.layer_norm, a.add_const};
  for (auto f : chosen) {
    TrainConfig cfg = a.cfg;
    cfg.seed = fold_seed(a.seed, f);
    std::cerr << "fold " << f << ": " << splits[f].train.size() << " train, " << splits[f].validation.size()
              << " validation, " << splits[f].test.size() << " test\n";
    const auto result = fit(d, splits[f], cfg, shape, [&](const EpochRecord& r) {
      log << f << ',' << r.epoch << ',' << format_number(r.train_loglik) << ',' << format_number(r.validation_loglik) << ','
          << format_number(r.seconds) << '\n';
      log.flush();
      if (a.progress && (r.epoch % a.progress == 0 || r.epoch == 1))
        std::cerr << "  epoch " << r.epoch << "  train " << r.train_loglik << "  validation " << r.validation_loglik << "  ("
                  << static_cast<long>(r.seconds) << " s)\n";
    });
    const std::string name = "model_fold" + std::to_string(f) + ".json";
    save_model(result.model, out.path(name));
    out.note(name);
    const auto& best = result.history.at(result.best_epoch - 1);
    log << "# fold " << f << ": stopped after epoch " << result.history.size() << " (" << result.stop_reason
        << "), best epoch " << result.best_epoch << '\n';
    summary << f << ',' << result.best_epoch << ',' << result.history.size() << ',' << result.stop_reason << ','
            << format_number(best.validation_loglik) << ',' << name << ',' << model_hash(result.model) << '\n';
    std::cerr << "  best epoch " << result.best_epoch << " of " << result.history.size() << " (" << result.stop_reason
              << "), wrote " << name << '\n';
  }
  if (!log) throw DataError("failed writing the training log");
  log.close();
  out.note("train_log.csv");
  out.write("train_summary.csv", summary.str());
  out.finish();
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  DataArgs data;
  std::vector<std::string> models;
  std::string out;
  std::vector<double> quantiles{0.25, 0.5, 0.75};
  int samples = 64;
  std::uint64_t seed = 0;

  Settings settings() const {
    std::string m;
    for (std::size_t i = 0; i < models.size(); ++i) m += (i ? "," : "") + models[i];
    return {{"data", data.path}, {"time", data.time},       {"event", data.event},
            {"models", m},       {"out", out},              {"quantiles", join(quantiles)},
            {"samples", std::to_string(samples)}, {"seed", std::to_string(seed)}};
  }
};

void add_evaluate(CLI::App& app, EvaluateArgs& a) {
  auto* s = app.add_subcommand("evaluate", "C-index, Brier score and AUROC on each model's test fold");
  s->add_option("--config", "key=value file; command-line flags win");
  a.data.add(s, true);
  s->add_option("--models", a.models, "model files, one per fold")->required()->delimiter(',')->check(CLI::ExistingFile);
  s->add_option("--out", a.out, "output directory")->required();
  s->add_option("--quantiles", a.quantiles, "event-time quantiles used as horizons")->delimiter(',')->capture_default_str();
  s->add_option("--samples", a.samples, "Monte Carlo samples per grid interval")->capture_default_str();
  s->add_option("--seed", a.seed)->capture_default_str();
}

struct MeanSem {
  std::optional<double> mean, sem;
  std::size_t n = 0;
};

MeanSem mean_sem(const std::vector<std::optional<double>>& values) {
  std::vector<double> v;
  for (const auto& x : values)
    if (x) v.push_back(*x);
  MeanSem r;
  r.n = v.size();
  if (v.empty()) return r;
  double sum = 0.0;
  for (double x : v) sum += x;
  r.mean = sum / static_cast<double>(v.size());
  if (v.size() >= 2) {
    double ss = 0.0;
    for (double x : v) ss += (x - *r.mean) * (x - *r.mean);
    r.sem = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return r;
}

int run_evaluate(const EvaluateArgs& a) {
  if (a.samples < 1) throw UsageError("--samples must be at least 1");
  const Dataset d = a.data.load();
  Output out(a.out, "evaluate");
  out.write("config.txt", settings_text(a.settings()));

  std::vector<EvaluationReport> reports;
  std::ostringstream all;
  all << "fold,quantile,horizon_time,c_index,brier,auroc\n";
  for (const auto& path : a.models) {
    const AdhamModel m = load_model(path);
    check_columns(m, d, path);
    const FoldSplit split = model_fold(m, d);
    EvaluationReport r = evaluate(m, d, split, a.quantiles, a.samples, a.seed);
    const std::string stem = file_safe(fs::path(path).stem().string());
    out.write(stem + "_eval.csv", report_csv(r));
    out.write(stem + "_eval.json", report_json(r).dump(2) + "\n");
    all << report_csv(r, false);
    reports.push_back(std::move(r));
  }
  out.write("evaluation.csv", all.str());

  std::ostringstream csv;
  nlohmann::json rows = nlohmann::json::array();
  csv << "quantile,horizon_time,folds,c_index_mean,c_index_sem,brier_mean,brier_sem,auroc_mean,auroc_sem\n";
  std::cout << "quantile  horizon        C-index            Brier              AUROC\n";
  const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  const auto show = [](const MeanSem& s) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(4);
    if (s.mean) o << *s.mean;
    else o << "NA    ";
    o << " +/- ";
    if (s.sem) o << *s.sem;
    else o << "NA    ";
    return o.str();
  };
  for (std::size_t q = 0; q < a.quantiles.size(); ++q) {
    std::vector<std::optional<double>> c, b, u;
    for (const auto& r : reports) {
      c.push_back(r.rows[q].c_index);
      b.push_back(r.rows[q].brier);
      u.push_back(r.rows[q].auroc);
    }
    const MeanSem cs = mean_sem(c), bs = mean_sem(b), us = mean_sem(u);
    const double horizon = reports.front().rows[q].horizon;
    csv << format_number(a.quantiles[q]) << ',' << format_number(horizon) << ',' << reports.size() << ','
        << format_optional(cs.mean) << ',' << format_optional(cs.sem) << ',' << format_optional(bs.mean) << ','
        << format_optional(bs.sem) << ',' << format_optional(us.mean) << ',' << format_optional(us.sem) << '\n';
    rows.push_back({{"quantile", a.quantiles[q]},
                    {"horizon_time", horizon},
                    {"folds", reports.size()},
                    {"c_index", {{"mean", opt(cs.mean)}, {"sem", opt(cs.sem)}, {"n", cs.n}}},
                    {"brier", {{"mean", opt(bs.mean)}, {"sem", opt(bs.sem)}, {"n", bs.n}}},
                    {"auroc", {{"mean", opt(us.mean)}, {"sem", opt(us.sem)}, {"n", us.n}}}});
    std::cout << std::setw(8) << a.quantiles[q] << "  " << std::setw(9) << horizon << "  " << show(cs) << "  " << show(bs)
              << "  " << show(us) << '\n';
  }
  out.write("summary.csv", csv.str());
  out.write("summary.json", nlohmann::json{{"rows", rows}}.dump(2) + "\n");
  out.finish();
  return 0;
}

// ---------------------------------------------------------------------------
// refine

struct RefineArgs {
  std::string model;
  DataArgs data;
  std::string out;
  double h = 0.8;
  std::vector<double> sweep;

  Settings settings() const {
    return {{"model", model},    {"data", data.path}, {"time", data.time},      {"event", data.event},
            {"out", out},        {"threshold", format_number(h)}, {"sweep", join(sweep)}};
  }
};

void add_refine(CLI::App& app, RefineArgs& a) {
  auto* s = app.add_subcommand("refine", "merge subgroups with correlated importance rows");
  s->add_option("--config", "key=value file; command-line flags win");
  s->add_option("--model", a.model, "trained model file")->required()->check(CLI::ExistingFile);
  a.data.add(s, false);
  s->add_option("--out", a.out, "output directory")->required();
  s->add_option("--threshold", a.h, "correlation threshold h in (0, 1]")->capture_default_str();
  s->add_option("--sweep", a.sweep, "also report refined C for these thresholds")->delimiter(',');
}

int run_refine(const RefineArgs& a) {
  const AdhamModel m = load_model(a.model);
  const Matrix rho = correlation_matrix(m.importance);
  const RefinementPlan plan = combine_clusters(rho, a.h);
  for (double h : a.sweep) combine_clusters(rho, h);  // validates before anything is written

  std::vector<SurvivalRecord> sample;
  if (a.data.given()) {
    const Dataset d = a.data.load();
    check_columns(m, d, a.model);
    if (m.lineage.folds >= 2) {
      for (auto i : model_fold(m, d).train) sample.push_back(d.records[i]);
    } else {
      sample = d.records;
    }
  }
  const AdhamModel refined = apply_merge(m, plan, sample);

  Output out(a.out, "refine");
  out.write("config.txt", settings_text(a.settings()));
  save_model(refined, out.path("refined_model.json"));
  out.note("refined_model.json");

  std::ostringstream report;
  report << "h=" << format_number(a.h) << '\n'
         << "original_c=" << m.C() << '\n'
         << "refined_c=" << refined.C() << '\n'
         << "merge_sample=" << sample.size() << '\n'
         << "source_model=" << a.model << '\n'
         << "source_hash=" << model_hash(m) << '\n'
         << "refined_hash=" << model_hash(refined) << '\n';
  out.write("refine_report.txt", report.str());

  std::ostringstream groups;
  groups << "group,size,members\n";
  for (std::size_t g = 0; g < plan.groups.size(); ++g)
    groups << g << ',' << plan.groups[g].size() << ',' << join_int(plan.groups[g], " ") << '\n';
  out.write("groups.csv", groups.str());
  out.write("rho_before.csv", matrix_csv(rho, numbered(m.C(), "s"), "subgroup"));
  out.write("rho_after.csv", matrix_csv(correlation_matrix(refined.importance), numbered(refined.C(), "s"), "subgroup"));

  if (!a.sweep.empty()) {
    std::ostringstream sweep;
    sweep << "h,refined_c\n";
    for (double h : a.sweep) sweep << format_number(h) << ',' << combine_clusters(rho, h).groups.size() << '\n';
    out.write("sweep.csv", sweep.str());
  }
  out.finish();
  std::cout << "C " << m.C() << " -> " << refined.C() << " at h = " << a.h << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// export

struct ExportArgs {
  std::string model;
  DataArgs data;
  std::string out;
  std::vector<std::size_t> patients;
  std::size_t times = 50;
  double t_max = 0.0;
  std::size_t sweep_count = 5;
  double sweep_min = -2.0;
  double sweep_max = 2.0;
  int samples = 64;
  std::uint64_t seed = 0;

  Settings settings() const {
    return {{"model", model},
            {"data", data.path},
            {"time", data.time},
            {"event", data.event},
            {"out", out},
            {"patients", join_int(patients)},
            {"times", std::to_string(times)},
            {"t-max", format_number(t_max)},
            {"sweep-count", std::to_string(sweep_count)},
            {"sweep-min", format_number(sweep_min)},
            {"sweep-max", format_number(sweep_max)},
            {"samples", std::to_string(samples)},
            {"seed", std::to_string(seed)}};
  }
};

void add_export(CLI::App& app, ExportArgs& a) {
  auto* s = app.add_subcommand("export", "write population, subgroup and individual interpretability tables");
  s->add_option("--config", "key=value file; command-line flags win");
  s->add_option("--model", a.model, "trained model file")->required()->check(CLI::ExistingFile);
  a.data.add(s, false);
  s->add_option("--out", a.out, "output directory")->required();
  s->add_option("--patients", a.patients, "data row indices (0-based) for individual tables")->delimiter(',');
  s->add_option("--times", a.times, "time grid points from 0 to --t-max")->capture_default_str();
  s->add_option("--t-max", a.t_max, "end of the time grid, 0 = largest training time")->capture_default_str();
  s->add_option("--sweep-count", a.sweep_count, "covariate values per population curve")->capture_default_str();
  s->add_option("--sweep-min", a.sweep_min, "lowest standardized covariate value")->capture_default_str();
  s->add_option("--sweep-max", a.sweep_max, "highest standardized covariate value")->capture_default_str();
  s->add_option("--samples", a.samples, "Monte Carlo samples per grid interval")->capture_default_str();
  s->add_option("--seed", a.seed)->capture_default_str();
}

int run_export(const ExportArgs& a) {
  if (a.times < 2) throw UsageError("--times must be at least 2");
  if (a.sweep_count < 1) throw UsageError("--sweep-count must be at least 1");
  if (a.samples < 1) throw UsageError("--samples must be at least 1");
  if (a.t_max < 0.0) throw UsageError("--t-max must be nonnegative");
  if (!a.patients.empty() && !a.data.given()) throw UsageError("--patients needs --data");

  const AdhamModel m = load_model(a.model);
  std::optional<Dataset> d;
  if (a.data.given()) {
    d = a.data.load();
    check_columns(m, *d, a.model);
    for (auto p : a.patients)
      if (p >= d->n())
        throw UsageError("patient index " + std::to_string(p) + " out of range (data has " + std::to_string(d->n()) + " rows)");
  }

  const double t_max = a.t_max > 0.0 ? a.t_max : m.time_scale;
  std::vector<double> grid(a.times);
  for (std::size_t k = 0; k < a.times; ++k) grid[k] = t_max * static_cast<double>(k) / static_cast<double>(a.times - 1);

  Output out(a.out, "export");
  out.write("config.txt", settings_text(a.settings()));
  Rng root(a.seed);

  // population level
  for (std::size_t dim = 0; dim < m.D(); ++dim) {
    std::ostringstream csv;
    csv << "value,standardized,time,survival\n";
    for (std::size_t v = 0; v < a.sweep_count; ++v) {
      const double z = a.sweep_count == 1 ? 0.5 * (a.sweep_min + a.sweep_max)
                                          : a.sweep_min + (a.sweep_max - a.sweep_min) * static_cast<double>(v) /
                                                              static_cast<double>(a.sweep_count - 1);
      Rng rng = root.split();
      const auto curve = population_survival(m.hazards[dim], z, grid, a.samples, rng, m.time_scale);
      for (std::size_t k = 0; k < grid.size(); ++k)
        csv << format_number(m.stats.restore(dim, z)) << ',' << format_number(z) << ',' << format_number(grid[k]) << ','
            << format_number(curve.values[k]) << '\n';
    }
    out.write("population_" + file_safe(m.feature_names[dim]) + ".csv", csv.str());
  }

  // subgroup level
  out.write("beta.csv", matrix_csv(m.importance.beta(), m.feature_names, "subgroup"));
  if (d) {
    Matrix X(static_cast<diff::Index>(d->n()), static_cast<diff::Index>(m.D()));
    Matrix raw(X.rows(), X.cols());
    for (std::size_t i = 0; i < d->n(); ++i) {
      const auto z = m.stats.apply(d->records[i].x);
      for (std::size_t j = 0; j < m.D(); ++j) {
        X(static_cast<diff::Index>(i), static_cast<diff::Index>(j)) = z[j];
        raw(static_cast<diff::Index>(i), static_cast<diff::Index>(j)) = d->records[i].x[j];
      }
    }
    const Matrix P = assignment_matrix(m, X);  // n x C
    const Eigen::VectorXd mass = P.colwise().sum().transpose();
    Matrix means = P.transpose() * raw;
    for (diff::Index c = 0; c < means.rows(); ++c)
      if (mass(c) > 0.0) means.row(c) /= mass(c);
    std::ostringstream csv;
    csv << "subgroup,mass";
    for (const auto& f : m.feature_names) csv << ',' << f;
    csv << '\n';
    for (diff::Index c = 0; c < means.rows(); ++c) {
      csv << c << ',' << format_number(mass(c) / static_cast<double>(d->n()));
      for (diff::Index j = 0; j < means.cols(); ++j) csv << ',' << format_number(means(c, j));
      csv << '\n';
    }
    out.write("subgroup_means.csv", csv.str());
  }

  // individual level
  for (auto p : a.patients) {
    const auto& rec = d->records[p];
    const auto x = m.stats.apply(rec.x);
    const std::string prefix = "patient_" + std::to_string(p);

    const Matrix parts = hazard_decomposition(m, x, grid);
    std::ostringstream haz;
    haz << "time";
    for (const auto& f : m.feature_names) haz << ',' << f;
    haz << ",marginal_hazard\n";
    for (std::size_t k = 0; k < grid.size(); ++k) {
      haz << format_number(grid[k]);
      for (diff::Index j = 0; j < parts.cols(); ++j) haz << ',' << format_number(parts(static_cast<diff::Index>(k), j));
      haz << ',' << format_number(parts.row(static_cast<diff::Index>(k)).sum()) << '\n';
    }
    out.write(prefix + "_hazard.csv", haz.str());

    Rng rng = root.split();
    const Matrix H = cumulative_hazard_decomposition(m, x, grid, a.samples, rng);
    std::ostringstream surv;
    surv << "time";
    for (const auto& f : m.feature_names) surv << ',' << f;
    surv << ",survival\n";
    for (std::size_t k = 0; k < grid.size(); ++k) {
      surv << format_number(grid[k]);
      for (diff::Index j = 0; j < H.cols(); ++j) surv << ',' << format_number(std::exp(-H(static_cast<diff::Index>(k), j)));
      surv << ',' << format_number(std::exp(-H.row(static_cast<diff::Index>(k)).sum())) << '\n';
    }
    out.write(prefix + "_survival.csv", surv.str());

    const Vector probs = assignment_probs(m, x);
    std::ostringstream assign;
    assign << "subgroup,probability\n";
    for (diff::Index c = 0; c < probs.size(); ++c) assign << c << ',' << format_number(probs(c)) << '\n';
    out.write(prefix + "_assignment.csv", assign.str());

    const Vector w = covariate_weight(m, x);
    std::ostringstream weights;
    weights << "covariate,raw_value,weight\n";
    for (std::size_t j = 0; j < m.D(); ++j)
      weights << m.feature_names[j] << ',' << format_number(rec.x[j]) << ',' << format_number(w(static_cast<diff::Index>(j)))
              << '\n';
    out.write(prefix + "_weights.csv", weights.str());
  }
  out.finish();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-of-additive-hazards survival models", "adham"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "adham 1.0");
  TrainArgs train;
  EvaluateArgs eval;
  RefineArgs refine;
  ExportArgs exp;
  add_train(app, train);
  add_evaluate(app, eval);
  add_refine(app, refine);
  add_export(app, exp);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = merge_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_usage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_usage;
  }

  try {
    if (app.got_subcommand("train")) return run_train(train);
    if (app.got_subcommand("evaluate")) return run_evaluate(eval);
    if (app.got_subcommand("refine")) return run_refine(refine);
    return run_export(exp);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_usage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return exit_numerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_data;
  }
}
