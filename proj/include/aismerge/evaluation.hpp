#pragma once

// Monte-Carlo safety tables, empirical approximation bounds and report files.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "aismerge/ais.hpp"
#include "aismerge/dataset.hpp"
#include "aismerge/errors.hpp"
#include "aismerge/human_driver.hpp"
#include "aismerge/mpc.hpp"
#include "aismerge/simulation.hpp"
#include "aismerge/training.hpp"

namespace aismerge {

/// Scenario of one Monte-Carlo episode: sampled driver weights and initial
/// states. Depends on (master seed, episode index) only, so every rho value
/// and every model sees the same scenarios.
struct McScenario {
  std::uint64_t seed = 0;
  IrlWeights hdv_weights;
  InitialConditions init;
};

inline McScenario mc_scenario(std::uint64_t master_seed, std::size_t episode,
                              const StyleRange& range) {
  McScenario sc;
  sc.seed = derive_seed(master_seed, {0xe7a1ULL, episode});
  Rng rng(sc.seed);
  sc.hdv_weights = sample_irl_weights(rng, range);
  sc.init = sample_initial_conditions(rng);
  return sc;
}

struct SafetyRow {
  std::string model;
  double rho = 0.0;
  std::size_t safe = 0;
  std::size_t total = 0;
  double percentage() const {
    return total ? 100.0 * static_cast<double>(safe) / static_cast<double>(total) : 0.0;
  }
};

struct SafetyTable {
  std::vector<SafetyRow> rows;
};

struct MonteCarloOptions {
  int j_max = 3;
  double tau_safe = kDefaultTauSafe;
  unsigned jobs = 1;
  MpcOptions mpc;
  std::string label = "model";
};

/// Per-episode verdicts for one rho value, in episode order.
template <Predictor P>
std::vector<char> monte_carlo_verdicts(const P& model, double rho, std::size_t n,
                                       std::uint64_t master_seed, ScenarioConfig cfg,
                                       const StyleRange& range, const MonteCarloOptions& opt) {
  cfg.rho = rho;
  cfg.validate();
  range.validate();
  std::vector<char> safe(n, 0);
  parallel_for(n, opt.jobs, [&](std::size_t i) {
    const McScenario sc = mc_scenario(master_seed, i, range);
    MpcController<P> ctrl(model, cfg, opt.j_max, opt.mpc);
    const EpisodeLog log = run_episode(ctrl, sc.hdv_weights, sc.init, cfg, sc.seed, opt.tau_safe);
    safe[i] = log.safe ? 1 : 0;
  });
  return safe;
}

/// Runs n paired episodes per rho value. Any failed episode aborts the table.
template <Predictor P>
SafetyTable monte_carlo(const P& model, const std::vector<double>& rho_values, std::size_t n,
                        std::uint64_t master_seed, const ScenarioConfig& cfg,
                        const StyleRange& range, const MonteCarloOptions& opt = {}) {
  if (n < 1) throw ConfigError("monte_carlo: n must be >= 1");
  if (rho_values.empty()) throw ConfigError("monte_carlo: need at least one rho value");
  SafetyTable table;
  for (double rho : rho_values) {
    const auto v = monte_carlo_verdicts(model, rho, n, master_seed, cfg, range, opt);
    SafetyRow row;
    row.model = opt.label;
    row.rho = rho;
    row.total = n;
    row.safe = static_cast<std::size_t>(std::count(v.begin(), v.end(), 1));
    table.rows.push_back(row);
  }
  return table;
}

// ---------------------------------------------------------------------------

struct ApBounds {
  double epsilon_hat = 0.0;  // worst one-step cost residual
  double delta_hat = 0.0;    // worst distance between predicted mean and realized horizon
  std::size_t steps = 0;
};

/// Empirical approximation residuals on held-out merge episodes. The cost
/// residual compares the stage cost under the realized next human-driver
/// state with the one under the first predicted state; the observation
/// residual is the Euclidean distance between the predicted mean horizon and
/// the realized horizon (positions then speeds), which is the closed-form
/// discrepancy between a unit-variance normal and a point sample.
template <Predictor P>
ApBounds estimate_ap_bounds(const P& model, const Dataset& data, const ScenarioConfig& cfg) {
  if (data.empty()) throw InvalidInputError("estimate_ap_bounds: empty dataset");
  if (!is_merge(model.variant())) throw ConfigError("estimate_ap_bounds: needs a merge model");
  const int H = model.horizon();
  ApBounds b;
  for (const auto& ep : data.episodes) {
    require_schema(ep, model.variant());
    auto s = model.init_state();
    for (std::size_t t = 0; t < ep.length(); ++t) {
      s = model.encode(s, ep.observations[t], ep.previous_action(t));
      if (ep.future(t) < static_cast<std::size_t>(H)) continue;
      const double u1 = ep.cav_actions[t];
      const HorizonPrediction p = model.decode(s, Vec::Constant(1, u1));
      const Observation& next = ep.observations[t + 1];
      const VehicleState x1_next{next[merge_obs::kZ1], next[merge_obs::kV1]};
      const double c_real = stage_cost(x1_next, u1, next[merge_obs::kZ2], next[merge_obs::kV2], cfg);
      const double c_pred = stage_cost(x1_next, u1, p.z_hat[0], p.v_hat[0], cfg);
      b.epsilon_hat = std::max(b.epsilon_hat, std::abs(c_real - c_pred));
      double sq = 0.0;
      for (int k = 1; k <= H; ++k) {
        const Observation& y = ep.observations[t + static_cast<std::size_t>(k)];
        const double dz = p.z_hat[k - 1] - y[merge_obs::kZ2];
        const double dv = p.v_hat[k - 1] - y[merge_obs::kV2];
        sq += dz * dz + dv * dv;
      }
      b.delta_hat = std::max(b.delta_hat, std::sqrt(sq));
      ++b.steps;
    }
  }
  if (b.steps == 0) throw InvalidInputError("estimate_ap_bounds: no episode has H + 2 steps");
  return b;
}

// ---------------------------------------------------------------------------
// Report files

inline const std::vector<std::string>& episode_columns() {
  static const std::vector<std::string> c{"t", "z1", "v1", "u1", "z2", "v2", "u2", "stage_cost"};
  return c;
}

inline std::string format_optional(std::optional<double> x) {
  return x ? format_double(*x) : std::string("none");
}

/// One row per sample; the last row has no applied action, so its action and
/// cost fields are 0. Crossing times and the verdict go in the header block.
inline void write_episode_csv(std::ostream& out, const EpisodeLog& log, Metadata meta = {}) {
  meta.emplace_back("controller", to_string(log.controller));
  meta.emplace_back("episode_seed", std::to_string(log.seed));
  meta.emplace_back("rho", format_double(log.cfg.rho));
  meta.emplace_back("tau_safe", format_double(log.tau_safe));
  meta.emplace_back("cav_crossing", format_optional(log.cav_crossing));
  meta.emplace_back("hdv_crossing", format_optional(log.hdv_crossing));
  meta.emplace_back("safe", log.safe ? "true" : "false");
  meta.emplace_back("hit_step_cap", log.hit_step_cap ? "true" : "false");
  write_metadata(out, meta);
  const auto& cols = episode_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  const std::size_t n = log.cav.states.size();
  for (std::size_t t = 0; t < n; ++t) {
    const bool last = t + 1 == n;
    const auto& c = log.cav.states[t];
    const auto& h = log.hdv.states[t];
    out << format_double(static_cast<double>(t) * log.cfg.dt) << ',' << format_double(c.z) << ','
        << format_double(c.v) << ',' << format_double(last ? 0.0 : log.cav.actions[t]) << ','
        << format_double(h.z) << ',' << format_double(h.v) << ','
        << format_double(last ? 0.0 : log.hdv.actions[t]) << ','
        << format_double(last ? 0.0 : log.stage_costs[t]) << '\n';
  }
}

template <class Writer>
void write_file(const std::string& path, Writer&& w) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  w(out);
  out.flush();
  if (!out) throw IoError(path, "write failed");
}

inline void write_episode_csv(const std::string& path, const EpisodeLog& log, const Metadata& meta = {}) {
  write_file(path, [&](std::ostream& o) { write_episode_csv(o, log, meta); });
}

/// Reads an episode CSV back into trajectories, verdict fields included.
inline EpisodeLog read_episode_csv(const std::string& path, const ScenarioConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open episode file");
  EpisodeLog log;
  log.cfg = cfg;
  log.cav.dt = log.hdv.dt = cfg.dt;
  std::string line;
  bool header = false;
  std::size_t line_no = 0;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = detail::trim(line.substr(1, eq - 1));
      const std::string val = detail::trim(line.substr(eq + 1));
      if (key == "safe") log.safe = val == "true";
      if (key == "tau_safe") log.tau_safe = std::stod(val);
      if (key == "rho") log.cfg.rho = std::stod(val);
      continue;
    }
    if (!header) {
      header = true;
      continue;
    }
    const auto f = detail::split_csv_line(line);
    if (f.size() != episode_columns().size()) {
      throw ParseError(path + ": line " + std::to_string(line_no) + ": wrong field count");
    }
    std::vector<double> r;
    for (std::size_t c = 0; c < f.size(); ++c) r.push_back(detail::parse_field(f[c], line_no, episode_columns()[c]));
    rows.push_back(std::move(r));
  }
  for (std::size_t t = 0; t < rows.size(); ++t) {
    const auto& r = rows[t];
    log.cav.states.push_back({r[1], r[2]});
    log.hdv.states.push_back({r[4], r[5]});
    if (t + 1 < rows.size()) {
      log.cav.actions.push_back(r[3]);
      log.hdv.actions.push_back(r[6]);
      log.stage_costs.push_back(r[7]);
    }
  }
  if (log.cav.states.empty()) throw ParseError(path + ": no samples");
  log.cav_crossing = conflict_crossing_time(log.cav, cfg.z_c);
  log.hdv_crossing = conflict_crossing_time(log.hdv, cfg.z_c);
  return log;
}

inline nlohmann::json metadata_json(const Metadata& meta) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : meta) j[k] = v;
  return j;
}

inline nlohmann::json table_json(const SafetyTable& t, const Metadata& meta = {}) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"model", r.model},
                    {"rho", r.rho},
                    {"safe", r.safe},
                    {"total", r.total},
                    {"percentage", r.percentage()}});
  }
  return {{"metadata", metadata_json(meta)}, {"rows", rows}};
}

inline void write_table_json(const std::string& path, const SafetyTable& t, const Metadata& meta = {}) {
  write_file(path, [&](std::ostream& o) { o << table_json(t, meta).dump(2) << '\n'; });
}

inline std::string table_text(const SafetyTable& t) {
  std::string out = "model                 rho    safe / total   percent\n";
  char buf[160];
  for (const auto& r : t.rows) {
    std::snprintf(buf, sizeof buf, "%-20s %5.2f  %6zu / %-6zu  %6.2f%%\n", r.model.c_str(), r.rho,
                  r.safe, r.total, r.percentage());
    out += buf;
  }
  return out;
}

}  // namespace aismerge
