#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "milnet/data.hpp"
#include "milnet/network.hpp"

namespace milnet {

inline constexpr const char* kModelFormat = "milnet-model";
inline constexpr int kModelVersion = 1;

/// A trained network plus the feature standardization it expects.
struct Model {
  Network network;
  std::optional<FeatureScaler> scaler;

  double score(const Matrix& raw_instances) const {
    return scaler ? network.score(scaler->apply(raw_instances)) : network.score(raw_instances);
  }
};

namespace detail {

using nlohmann::json;

inline json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    rows.push_back(std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols()));
  }
  return rows;
}

inline Vector vector_from(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

inline Matrix matrix_from(const json& j, Eigen::Index cols) {
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const auto row = j.at(static_cast<std::size_t>(r)).get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != cols) throw DataError("model: ragged weight matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

inline json layer_json(const DenseLayer& l) {
  return {{"activation", std::string(to_string(l.activation()))},
          {"in", l.in_dim()},
          {"out", l.out_dim()},
          {"weights", to_json(l.weights())},
          {"bias", to_json(l.bias())}};
}

inline DenseLayer layer_from(const json& j, Activation act) {
  const auto in = j.at("in").get<Eigen::Index>();
  return DenseLayer(matrix_from(j.at("weights"), in), vector_from(j.at("bias")), act);
}

}  // namespace detail

inline nlohmann::json spec_to_json(const NetworkSpec& s) {
  return {{"variant", std::string(to_string(s.variant))},
          {"widths", s.widths},
          {"pooling", std::string(to_string(s.pooling.method))},
          {"lse_r", s.pooling.r},
          {"dropout", s.dropout_rate},
          {"seed", s.seed},
          {"ds_weights", s.ds_weights}};
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  const auto variant = parse_variant(j.at("variant").get<std::string>());
  if (!variant) throw DataError("model: unknown variant");
  const auto pool = parse_pool_method(j.at("pooling").get<std::string>());
  if (!pool) throw DataError("model: unknown pooling");
  s.variant = *variant;
  s.widths = j.at("widths").get<std::vector<int>>();
  s.pooling = {*pool, j.at("lse_r").get<double>()};
  s.dropout_rate = j.at("dropout").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.ds_weights = j.at("ds_weights").get<std::vector<double>>();
  return s;
}

inline nlohmann::json model_to_json(const Model& m) {
  nlohmann::json trunk = nlohmann::json::array(), heads = nlohmann::json::array();
  for (const auto& l : m.network.trunk()) trunk.push_back(detail::layer_json(l));
  for (const auto& l : m.network.heads()) heads.push_back(detail::layer_json(l));
  nlohmann::json j = {{"format", kModelFormat},
                      {"version", kModelVersion},
                      {"spec", spec_to_json(m.network.spec())},
                      {"input_dim", m.network.input_dim()},
                      {"trunk", trunk},
                      {"heads", heads}};
  if (m.scaler) j["scaler"] = {{"mean", detail::to_json(m.scaler->mean)}, {"scale", detail::to_json(m.scaler->scale)}};
  return j;
}

/// Inverse of model_to_json. Malformed documents raise DataError.
inline Model model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kModelFormat) throw DataError("model: not a milnet model file");
    const int version = j.at("version").get<int>();
    if (version != kModelVersion) throw DataError("model: unsupported version " + std::to_string(version));
    const NetworkSpec spec = spec_from_json(j.at("spec"));
    const auto input_dim = j.at("input_dim").get<Eigen::Index>();
    std::vector<DenseLayer> trunk, heads;
    for (const auto& l : j.at("trunk")) trunk.push_back(detail::layer_from(l, Activation::ReLU));
    for (const auto& l : j.at("heads")) heads.push_back(detail::layer_from(l, Activation::Sigmoid));
    Model m{Network::from_layers(spec, input_dim, std::move(trunk), std::move(heads)), std::nullopt};
    if (j.contains("scaler")) {
      FeatureScaler sc{detail::vector_from(j["scaler"].at("mean")), detail::vector_from(j["scaler"].at("scale"))};
      if (sc.mean.size() != input_dim || sc.scale.size() != input_dim) throw DataError("model: scaler size mismatch");
      m.scaler = std::move(sc);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("model: ") + e.what());
  } catch (const ShapeError& e) {
    throw DataError(std::string("model: ") + e.what());
  }
}

inline void save_model(const Model& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << model_to_json(m).dump(1) << '\n';
}

inline Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("model: ") + e.what());
  }
  return model_from_json(j);
}

}  // namespace milnet
