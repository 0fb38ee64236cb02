#pragma once

// Run configuration: one JSON document, every field optional, defaults equal
// to the published merging parameters.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "aismerge/dynamics.hpp"
#include "aismerge/errors.hpp"
#include "aismerge/human_driver.hpp"
#include "aismerge/simulation.hpp"
#include "aismerge/training.hpp"

namespace aismerge {

inline constexpr const char* kToolVersion = "0.1.0";

struct EvaluationSettings {
  std::size_t n = 500;
  std::vector<double> rho{0.6, 0.8, 1.0};
  double tau_safe = kDefaultTauSafe;
  int j_max = 3;
};

struct PathSettings {
  std::string dataset;
  std::string model;
  std::string out_dir = ".";
};

struct RunConfig {
  ScenarioConfig scenario;
  StyleRange style;
  IrlWeights aggressive;
  IrlWeights conservative;
  TrainConfig train;
  EvaluationSettings evaluation;
  PathSettings paths;
  std::uint64_t seed = 7;
  std::size_t episodes = 2000;  // generate default

  RunConfig() {
    aggressive = aggressive_preset(scenario).weights;
    conservative = conservative_preset(scenario).weights;
  }

  void validate() const {
    scenario.validate();
    style.validate();
    aggressive.validate(scenario);
    conservative.validate(scenario);
    train.validate();
    if (train.H != scenario.H) throw ConfigError("train.H must equal scenario.H");
    if (evaluation.n < 1) throw ConfigError("evaluation.n must be >= 1");
    if (evaluation.rho.empty()) throw ConfigError("evaluation.rho must be non-empty");
    for (double r : evaluation.rho) {
      if (!(r > 0)) throw ConfigError("evaluation.rho values must be > 0");
    }
    if (!(evaluation.tau_safe >= 0)) throw ConfigError("evaluation.tau_safe must be >= 0");
    if (evaluation.j_max < 1) throw ConfigError("evaluation.j_max must be >= 1");
  }

  DriverPreset preset(const std::string& name) const {
    if (name == "aggressive") {
      DriverPreset p = aggressive_preset(scenario);
      p.weights = aggressive;
      return p;
    }
    if (name == "conservative") {
      DriverPreset p = conservative_preset(scenario);
      p.weights = conservative;
      return p;
    }
    throw ConfigError("unknown preset '" + name + "'");
  }
};

// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const IrlWeights& w) {
  return {{"theta_accel", w.theta_accel}, {"theta_speed", w.theta_speed},
          {"theta_prox", w.theta_prox},   {"v_des", w.v_des},
          {"lookahead", w.lookahead}};
}

inline IrlWeights irl_weights_from_json(const nlohmann::json& j, IrlWeights w = {}) {
  w.theta_accel = j.value("theta_accel", w.theta_accel);
  w.theta_speed = j.value("theta_speed", w.theta_speed);
  w.theta_prox = j.value("theta_prox", w.theta_prox);
  w.v_des = j.value("v_des", w.v_des);
  w.lookahead = j.value("lookahead", w.lookahead);
  return w;
}

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& s = c.scenario;
  const auto& r = c.style;
  const auto& t = c.train;
  auto iv = [](const Interval& i) { return nlohmann::json::array({i.lo, i.hi}); };
  return {
      {"seed", c.seed},
      {"episodes", c.episodes},
      {"scenario",
       {{"L_c", s.L_c}, {"z_c", s.z_c}, {"dt", s.dt}, {"v_min", s.v_min}, {"v_max", s.v_max},
        {"u_min", s.u_min}, {"u_max", s.u_max}, {"w1", s.w1}, {"w2", s.w2}, {"w3", s.w3},
        {"rho", s.rho}, {"H", s.H}}},
      {"style_range",
       {{"theta_accel", iv(r.theta_accel)}, {"theta_speed", iv(r.theta_speed)},
        {"theta_prox", iv(r.theta_prox)}, {"v_des", iv(r.v_des)},
        {"lookahead", {r.lookahead.first, r.lookahead.second}}}},
      {"presets", {{"aggressive", to_json(c.aggressive)}, {"conservative", to_json(c.conservative)}}},
      {"train",
       {{"epochs", t.epochs}, {"learning_rate", t.learning_rate}, {"seed", t.seed}, {"H", t.H},
        {"sequence_length", t.sequence_length}, {"validation_fraction", t.validation_fraction},
        {"batch_size", t.batch_size}, {"beta1", t.beta1}, {"beta2", t.beta2},
        {"adam_eps", t.adam_eps}, {"clip_norm", t.clip_norm}}},
      {"evaluation",
       {{"n", c.evaluation.n}, {"rho", c.evaluation.rho}, {"tau_safe", c.evaluation.tau_safe},
        {"j_max", c.evaluation.j_max}}},
      {"paths",
       {{"dataset", c.paths.dataset}, {"model", c.paths.model}, {"out_dir", c.paths.out_dir}}},
  };
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    auto iv = [](const nlohmann::json& a, Interval d) {
      if (a.is_null()) return d;
      if (!a.is_array() || a.size() != 2) throw ConfigError("style range entries must be [lo, hi]");
      return Interval{a[0].get<double>(), a[1].get<double>()};
    };
    auto obj = [&](const char* key) { return j.contains(key) ? j.at(key) : nlohmann::json::object(); };
    c.seed = j.value("seed", c.seed);
    c.episodes = j.value("episodes", c.episodes);
    const auto s = obj("scenario");
    auto& sc = c.scenario;
    sc.L_c = s.value("L_c", sc.L_c);
    sc.z_c = s.value("z_c", sc.z_c);
    sc.dt = s.value("dt", sc.dt);
    sc.v_min = s.value("v_min", sc.v_min);
    sc.v_max = s.value("v_max", sc.v_max);
    sc.u_min = s.value("u_min", sc.u_min);
    sc.u_max = s.value("u_max", sc.u_max);
    sc.w1 = s.value("w1", sc.w1);
    sc.w2 = s.value("w2", sc.w2);
    sc.w3 = s.value("w3", sc.w3);
    sc.rho = s.value("rho", sc.rho);
    sc.H = s.value("H", sc.H);
    const auto r = obj("style_range");
    auto& st = c.style;
    st.theta_accel = iv(r.value("theta_accel", nlohmann::json()), st.theta_accel);
    st.theta_speed = iv(r.value("theta_speed", nlohmann::json()), st.theta_speed);
    st.theta_prox = iv(r.value("theta_prox", nlohmann::json()), st.theta_prox);
    st.v_des = iv(r.value("v_des", nlohmann::json()), st.v_des);
    if (r.contains("lookahead")) {
      st.lookahead = {r.at("lookahead").at(0).get<int>(), r.at("lookahead").at(1).get<int>()};
    }
    c.aggressive = aggressive_preset(sc).weights;
    c.conservative = conservative_preset(sc).weights;
    const auto p = obj("presets");
    if (p.contains("aggressive")) c.aggressive = irl_weights_from_json(p.at("aggressive"), c.aggressive);
    if (p.contains("conservative")) {
      c.conservative = irl_weights_from_json(p.at("conservative"), c.conservative);
    }
    const auto t = obj("train");
    auto& tc = c.train;
    tc.H = sc.H;
    tc.epochs = t.value("epochs", tc.epochs);
    tc.learning_rate = t.value("learning_rate", tc.learning_rate);
    tc.seed = t.value("seed", tc.seed);
    tc.H = t.value("H", tc.H);
    tc.sequence_length = t.value("sequence_length", tc.sequence_length);
    tc.validation_fraction = t.value("validation_fraction", tc.validation_fraction);
    tc.batch_size = t.value("batch_size", tc.batch_size);
    tc.beta1 = t.value("beta1", tc.beta1);
    tc.beta2 = t.value("beta2", tc.beta2);
    tc.adam_eps = t.value("adam_eps", tc.adam_eps);
    tc.clip_norm = t.value("clip_norm", tc.clip_norm);
    const auto e = obj("evaluation");
    c.evaluation.n = e.value("n", c.evaluation.n);
    c.evaluation.rho = e.value("rho", c.evaluation.rho);
    c.evaluation.tau_safe = e.value("tau_safe", c.evaluation.tau_safe);
    c.evaluation.j_max = e.value("j_max", c.evaluation.j_max);
    const auto pa = obj("paths");
    c.paths.dataset = pa.value("dataset", c.paths.dataset);
    c.paths.model = pa.value("model", c.paths.model);
    c.paths.out_dir = pa.value("out_dir", c.paths.out_dir);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return run_config_from_json(nlohmann::json::parse(buf.str()));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// 64-bit FNV-1a of the canonical JSON form, as 16 hex digits. Paths are
/// left out: they do not change any data.
inline std::string config_hash(const RunConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("paths");
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace aismerge
