#pragma once

// JSON model files. Doubles are written with shortest round-trip formatting,
// so load(save(m)) reproduces every parameter bit for bit.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "adham/error.hpp"
#include "adham/model.hpp"

namespace adham {

inline constexpr const char* model_format = "adham-model";
inline constexpr int model_version = 1;

namespace detail {

using nlohmann::json;

inline json matrix_to_json(const Matrix& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<diff::Index>();
  const auto cols = j.at("cols").get<diff::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<diff::Index>(data.size()) != rows * cols)
    throw DataError("tensor data length does not match its shape");
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

inline json network_to_json(const diff::NetworkParams& p) {
  const auto& a = p.arch;
  json tensors = json::array();
  for (const auto& t : p.tensors) tensors.push_back(matrix_to_json(t));
  return {{"architecture",
           {{"input", a.input},
            {"hidden", a.hidden},
            {"depth", a.depth},
            {"output", a.output},
            {"head", diff::to_string(a.head)},
            {"layer_norm", a.layer_norm},
            {"add_const", a.add_const}}},
          {"tensors", std::move(tensors)}};
}

inline diff::NetworkParams network_from_json(const json& j) {
  diff::NetworkParams p;
  const auto& a = j.at("architecture");
  p.arch.input = a.at("input").get<int>();
  p.arch.hidden = a.at("hidden").get<int>();
  p.arch.depth = a.at("depth").get<int>();
  p.arch.output = a.at("output").get<int>();
  p.arch.head = diff::head_from_string(a.at("head").get<std::string>());
  p.arch.layer_norm = a.at("layer_norm").get<bool>();
  p.arch.add_const = a.at("add_const").get<bool>();
  for (const auto& t : j.at("tensors")) p.tensors.push_back(matrix_from_json(t));
  diff::check_shapes(p);
  return p;
}

}  // namespace detail

inline nlohmann::json model_to_json(const AdhamModel& m) {
  using detail::json;
  json hazards = json::array();
  for (const auto& h : m.hazards) {
    json hj = detail::network_to_json(h.params);
    hj["covariate"] = h.covariate;
    hazards.push_back(std::move(hj));
  }
  json assignment = detail::network_to_json(m.assignment.params);
  assignment["groups"] = m.assignment.groups;
  json lineage = {{"fold", m.lineage.fold},
                  {"folds", m.lineage.folds},
                  {"seed", m.lineage.seed},
                  {"split_seed", m.lineage.split_seed},
                  {"source_hash", m.lineage.source_hash},
                  {"threshold", m.lineage.threshold},
                  {"original_c", m.lineage.original_c}};
  return {{"format", model_format},
          {"version", model_version},
          {"feature_names", m.feature_names},
          {"time_scale", m.time_scale},
          {"standardization", {{"mean", m.stats.mean}, {"std", m.stats.std}}},
          {"assignment", std::move(assignment)},
          {"importance_logits", detail::matrix_to_json(m.importance.logits)},
          {"hazards", std::move(hazards)},
          {"lineage", std::move(lineage)}};
}

inline AdhamModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != model_format) throw DataError("not an adham model file");
    const int version = j.at("version").get<int>();
    if (version != model_version) throw DataError("unsupported model file version " + std::to_string(version));
    AdhamModel m;
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    m.time_scale = j.at("time_scale").get<double>();
    m.stats.mean = j.at("standardization").at("mean").get<std::vector<double>>();
    m.stats.std = j.at("standardization").at("std").get<std::vector<double>>();
    const auto& a = j.at("assignment");
    m.assignment.params = detail::network_from_json(a);
    m.assignment.groups = a.at("groups").get<std::vector<std::vector<std::size_t>>>();
    m.importance.logits = detail::matrix_from_json(j.at("importance_logits"));
    for (const auto& h : j.at("hazards")) m.hazards.push_back({detail::network_from_json(h), h.at("covariate").get<std::size_t>()});
    const auto& l = j.at("lineage");
    m.lineage.fold = l.at("fold").get<std::size_t>();
    m.lineage.folds = l.at("folds").get<std::size_t>();
    m.lineage.seed = l.at("seed").get<std::uint64_t>();
    m.lineage.split_seed = l.at("split_seed").get<std::uint64_t>();
    m.lineage.source_hash = l.at("source_hash").get<std::string>();
    m.lineage.threshold = l.at("threshold").get<double>();
    m.lineage.original_c = l.at("original_c").get<std::size_t>();
    check_model(m);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model file: ") + e.what());
  }
}

inline std::string model_to_string(const AdhamModel& m) { return model_to_json(m).dump(); }

/// FNV-1a over the serialized model, as 16 hex digits.
inline std::string model_hash(const AdhamModel& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : model_to_string(m)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void save_model(const AdhamModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << model_to_string(m) << '\n';
  if (!out) throw DataError("failed writing '" + path + "'");
}

inline AdhamModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + path + "' is not valid JSON: " + e.what());
  }
  return model_from_json(j);
}

}  // namespace adham
