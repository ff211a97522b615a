#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "connlab/errors.hpp"
#include "connlab/grad.hpp"
#include "connlab/model.hpp"
#include "connlab/optim.hpp"

namespace connlab {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("matrix must be a nested array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!j[i].is_array() || static_cast<Eigen::Index>(j[i].size()) != cols) {
      throw ConfigError("matrix rows must have equal length");
    }
    for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = j[i][j2].get<double>();
  }
  return m;
}

inline nlohmann::json optimizer_to_json(const Optimizer& opt) {
  nlohmann::json j;
  if (const auto* gd = std::get_if<GdConfig>(&opt.config())) {
    j = {{"kind", "gd"}, {"lr", gd->lr}, {"cosine", gd->cosine}, {"total_steps", gd->total_steps}};
  } else {
    const auto& c = std::get<AdamConfig>(opt.config());
    j = {{"kind", "adam"},      {"lr", c.lr},         {"beta1", c.beta1},
         {"beta2", c.beta2},    {"eps", c.eps},       {"weight_decay", c.weight_decay},
         {"cosine", c.cosine},  {"total_steps", c.total_steps}};
    nlohmann::json first = nlohmann::json::array();
    nlohmann::json second = nlohmann::json::array();
    for (const auto& m : opt.first_moments()) first.push_back(matrix_to_json(m));
    for (const auto& m : opt.second_moments()) second.push_back(matrix_to_json(m));
    j["first_moments"] = std::move(first);
    j["second_moments"] = std::move(second);
  }
  j["step"] = opt.step_count();
  return j;
}

inline OptimizerConfig optimizer_config_from_json(const nlohmann::json& j) {
  const auto kind = j.value("kind", std::string("gd"));
  if (kind == "gd") {
    GdConfig c;
    c.lr = j.value("lr", c.lr);
    c.cosine = j.value("cosine", c.cosine);
    c.total_steps = j.value("total_steps", c.total_steps);
    return c;
  }
  if (kind == "adam") {
    AdamConfig c;
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.cosine = j.value("cosine", c.cosine);
    c.total_steps = j.value("total_steps", c.total_steps);
    return c;
  }
  throw ConfigError("unknown optimizer kind '" + kind + "'");
}

inline Optimizer optimizer_from_json(const nlohmann::json& j) {
  Optimizer opt(optimizer_config_from_json(j));
  std::vector<Matrix> first;
  std::vector<Matrix> second;
  if (j.contains("first_moments")) {
    for (const auto& m : j["first_moments"]) first.push_back(matrix_from_json(m));
    for (const auto& m : j.at("second_moments")) second.push_back(matrix_from_json(m));
  }
  opt.restore(j.value("step", 0L), std::move(first), std::move(second));
  return opt;
}

struct Checkpoint {
  ModelParams params;
  LinkParams link;
  long step = 0;
  std::string rng_state;
  nlohmann::json init;       // echo of the init scheme
  nlohmann::json optimizer;  // optimizer_to_json output, or null
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& ck) {
  const auto& p = ck.params;
  nlohmann::json j;
  j["L"] = p.depth;
  j["n"] = p.n;
  j["mode"] = to_string(p.mode);
  j["nonneg"] = p.nonneg;
  j["alpha"] = ck.link.alpha;
  j["epsilon"] = ck.link.epsilon;
  nlohmann::json weights = nlohmann::json::array();
  for (const auto& w : p.weights) weights.push_back(matrix_to_json(w));
  j["weights"] = std::move(weights);
  if (p.is_structured()) {
    nlohmann::json a = nlohmann::json::array();
    nlohmann::json b = nlohmann::json::array();
    for (const auto& s : p.structured) {
      a.push_back(matrix_to_json(s.a));
      b.push_back(matrix_to_json(s.b));
    }
    j["structured"] = {{"A", std::move(a)}, {"B", std::move(b)}};
  }
  j["step"] = ck.step;
  j["rng_state"] = ck.rng_state;
  if (!ck.init.is_null()) j["init"] = ck.init;
  if (!ck.optimizer.is_null()) j["optimizer"] = ck.optimizer;
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    Checkpoint ck;
    const int depth = j.at("L").get<int>();
    const int n = j.at("n").get<int>();
    const auto mode = weight_mode_from_string(j.at("mode").get<std::string>());
    ck.params = ModelParams::zeros(depth, n, mode);
    ck.params.nonneg = j.value("nonneg", false);
    ck.link.alpha = j.at("alpha").get<double>();
    ck.link.epsilon = j.at("epsilon").get<double>();
    ck.link.validate();
    const auto& weights = j.at("weights");
    if (static_cast<int>(weights.size()) != depth) throw ShapeError("checkpoint: weights/L mismatch");
    for (int l = 0; l < depth; ++l) ck.params.weights[l] = matrix_from_json(weights[l]);
    if (mode == WeightMode::kStructured) {
      const auto& s = j.at("structured");
      for (int l = 0; l < depth; ++l) {
        ck.params.structured[l].a = matrix_from_json(s.at("A").at(l));
        ck.params.structured[l].b = matrix_from_json(s.at("B").at(l));
      }
    }
    check_shapes(ck.params);
    ck.step = j.value("step", 0L);
    ck.rng_state = j.value("rng_state", std::string());
    if (j.contains("init")) ck.init = j["init"];
    if (j.contains("optimizer")) ck.optimizer = j["optimizer"];
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write checkpoint " + path.string());
  os << checkpoint_to_json(ck).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace connlab
