#pragma once

#include <json.hpp>

#include "tgpssm/common.hpp"
#include "tgpssm/flows.hpp"
#include "tgpssm/param_store.hpp"

namespace tgpssm {

using Json = nlohmann::json;

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (int i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j) {
  if (!j.is_array()) throw ConfigError("matrix: expected array of rows");
  int rows = static_cast<int>(j.size());
  if (rows == 0) return Matrix(0, 0);
  int cols = static_cast<int>(j[0].size());
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(j[i].size()) != cols)
      throw ConfigError("matrix: ragged rows");
    for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

inline Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Vector vector_from_json(const Json& j) {
  Vector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

inline Json params_to_json(const ad::ParamStore& store) {
  Json out = Json::object();
  for (std::size_t i = 0; i < store.size(); ++i) {
    int id = static_cast<int>(i);
    out[store.name(id)] = matrix_to_json(store.value(id));
  }
  return out;
}

inline void params_from_json(const Json& j, ad::ParamStore& store) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    int id = static_cast<int>(i);
    const std::string& name = store.name(id);
    if (!j.contains(name))
      throw ConfigError("checkpoint: missing parameter '" + name + "'");
    Matrix m = matrix_from_json(j[name]);
    if (m.rows() != store.value(id).rows() || m.cols() != store.value(id).cols())
      throw ConfigError("checkpoint: shape mismatch for '" + name + "'");
    store.value(id) = std::move(m);
  }
}

inline Json flow_spec_to_json(const FlowLayerSpec& spec) {
  Json j;
  j["kind"] = to_string(spec.kind);
  j["trainable"] = spec.trainable;
  if (spec.kind == FlowKind::kCoupling) {
    j["split"] = spec.split;
    j["swap"] = spec.swap;
    j["hidden"] = spec.hidden;
  } else {
    if (spec.init.size() > 0) j["init"] = vector_to_json(spec.init);
    if (spec.kind == FlowKind::kSumOfTanh ||
        spec.kind == FlowKind::kSumOfLogExp)
      j["terms"] = spec.terms;
  }
  return j;
}

inline FlowLayerSpec flow_spec_from_json(const Json& j) {
  FlowLayerSpec spec;
  if (!j.contains("kind")) throw ConfigError("flow spec: missing 'kind'");
  spec.kind = flow_kind_from_string(j.at("kind").get<std::string>());
  spec.trainable = j.value("trainable", true);
  spec.terms = j.value("terms", 2);
  spec.split = j.value("split", 1);
  spec.swap = j.value("swap", false);
  spec.hidden = j.value("hidden", 16);
  if (j.contains("init")) spec.init = vector_from_json(j.at("init"));
  return spec;
}

}  // namespace tgpssm
