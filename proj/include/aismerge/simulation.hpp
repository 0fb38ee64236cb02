#pragma once

// Closed-loop merging episodes: the automated vehicle (one of several
// controllers) against a feature-weighted human driver.

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aismerge/ais.hpp"
#include "aismerge/dataset.hpp"
#include "aismerge/dynamics.hpp"
#include "aismerge/human_driver.hpp"
#include "aismerge/mpc.hpp"
#include "aismerge/random.hpp"

namespace aismerge {

inline constexpr double kDefaultTauSafe = 1.0;     // s
inline constexpr double kExitMargin = 10.0;        // episode ends past z_c + this, m
inline constexpr double kEpisodeTimeCap = 60.0;    // s
inline constexpr double kYieldHeadway = 1.5;       // gap-acceptance threshold, s
inline constexpr double kSpeedTrackingGain = 0.5;  // 1/s

struct InitialConditions {
  VehicleState cav;
  VehicleState hdv;
};

struct InitialRange {
  Interval z{-10.0, 10.0};
  Interval v{8.0, 12.0};
};

inline InitialConditions sample_initial_conditions(Rng& rng, const InitialRange& r = {}) {
  InitialConditions ic;
  ic.cav.z = uniform(rng, r.z.lo, r.z.hi);
  ic.hdv.z = uniform(rng, r.z.lo, r.z.hi);
  ic.cav.v = uniform(rng, r.v.lo, r.v.hi);
  ic.hdv.v = uniform(rng, r.v.lo, r.v.hi);
  return ic;
}

struct PresetJitter {
  double z = 1.0;  // m, half-width
  double v = 0.5;  // m/s, half-width
};

/// Nominal preset geometry perturbed uniformly by a seeded jitter.
inline InitialConditions preset_initial_conditions(const DriverPreset& p, std::uint64_t seed,
                                                   const PresetJitter& j = {}) {
  Rng rng(derive_seed(seed, {0x9e5e7ULL}));
  InitialConditions ic{p.cav0, p.hdv0};
  ic.cav.z += uniform(rng, -j.z, j.z);
  ic.hdv.z += uniform(rng, -j.z, j.z);
  ic.cav.v += uniform(rng, -j.v, j.v);
  ic.hdv.v += uniform(rng, -j.v, j.v);
  return ic;
}

/// Clamps a requested acceleration to [u_min, u_max] and further so that the
/// next speed stays within [v_min, v_max].
inline double clip_cav_action(const VehicleState& x, double u, const ScenarioConfig& cfg) {
  double lo = std::max(cfg.u_min, (cfg.v_min - x.v) / cfg.dt);
  double hi = std::min(cfg.u_max, (cfg.v_max - x.v) / cfg.dt);
  if (lo > hi) lo = hi = (x.v > cfg.v_max) ? cfg.u_min : cfg.u_max;
  return std::clamp(u, lo, hi);
}

inline double time_to_point(const VehicleState& x, double z) {
  return (z - x.z) / std::max(x.v, 0.1);
}

/// Rule-based yielding controller. If the two arrival times at the conflict
/// point are within the headway, slow down to arrive a headway after the
/// human driver; otherwise track v_max.
inline double gap_acceptance_action(const VehicleState& cav, const VehicleState& hdv,
                                    const ScenarioConfig& cfg) {
  double v_target = cfg.v_max;
  if (cav.z < cfg.z_c && hdv.z < cfg.z_c) {
    const double t_hdv = time_to_point(hdv, cfg.z_c);
    const double t_cav = time_to_point(cav, cfg.z_c);
    if (std::abs(t_cav - t_hdv) < kYieldHeadway) {
      v_target = (cfg.z_c - cav.z) / (t_hdv + kYieldHeadway);
    }
  }
  return std::clamp(kSpeedTrackingGain * (v_target - cav.v), cfg.u_min, cfg.u_max);
}

// ---------------------------------------------------------------------------
// Controllers for the automated vehicle.

enum class ControllerKind { kIterativeMpc, kGapAcceptance, kIrl };

inline std::string to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::kIterativeMpc: return "iterative-mpc";
    case ControllerKind::kGapAcceptance: return "gap-acceptance";
    case ControllerKind::kIrl: return "irl";
  }
  return "?";
}

/// What a controller sees at each step.
struct StepInput {
  const Observation& y;
  const VehicleState& cav;
  const VehicleState& hdv;
  double u_prev;  // CAV's previous applied action (0 at t = 0)
};

struct ControllerOutput {
  double u = 0.0;
  std::optional<Vec> ais_state;
  std::vector<double> change_norms;
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual ControllerKind kind() const = 0;
  virtual void reset() {}
  virtual ControllerOutput act(const StepInput& in) = 0;
};

class GapAcceptanceController final : public Controller {
 public:
  explicit GapAcceptanceController(ScenarioConfig cfg) : cfg_(cfg) {}
  ControllerKind kind() const override { return ControllerKind::kGapAcceptance; }
  ControllerOutput act(const StepInput& in) override {
    return {gap_acceptance_action(in.cav, in.hdv, cfg_), std::nullopt, {}};
  }

 private:
  ScenarioConfig cfg_;
};

/// Drives the automated vehicle with the same feature-weighted model as the
/// human driver (exploratory data generation).
class IrlController final : public Controller {
 public:
  IrlController(IrlWeights w, ScenarioConfig cfg) : w_(w), cfg_(cfg) { w_.validate(cfg_); }
  ControllerKind kind() const override { return ControllerKind::kIrl; }
  ControllerOutput act(const StepInput& in) override {
    return {hdv_action(in.cav, in.hdv, w_, cfg_), std::nullopt, {}};
  }
  const IrlWeights& weights() const { return w_; }

 private:
  IrlWeights w_;
  ScenarioConfig cfg_;
};

/// Iterative predict-and-solve receding-horizon controller. The encoder is
/// fed every observation from the start of the episode.
template <Predictor P>
class MpcController final : public Controller {
 public:
  MpcController(const P& model, ScenarioConfig cfg, int j_max, MpcOptions opt = {})
      : model_(&model), cfg_(cfg), j_max_(j_max), opt_(opt), state_(model.init_state()) {
    if (!is_merge(model.variant())) throw ConfigError("MPC controller needs a merge model");
    if (model.horizon() != cfg.H) {
      throw ConfigError("model horizon " + std::to_string(model.horizon()) +
                        " differs from scenario H " + std::to_string(cfg.H));
    }
    if (j_max < 1) throw ConfigError("j_max must be >= 1");
  }
  ControllerKind kind() const override { return ControllerKind::kIterativeMpc; }
  void reset() override { state_ = model_->init_state(); }
  ControllerOutput act(const StepInput& in) override {
    auto r = iterative_mpc_step(*model_, state_, in.y, in.u_prev, cfg_, j_max_, opt_);
    state_ = r.state;
    ControllerOutput out;
    out.u = r.u;
    if constexpr (std::is_same_v<typename P::State, AisState>) out.ais_state = state_.s;
    out.change_norms = std::move(r.diagnostics.change_norms);
    return out;
  }

 private:
  const P* model_;
  ScenarioConfig cfg_;
  int j_max_;
  MpcOptions opt_;
  typename P::State state_;
};

// ---------------------------------------------------------------------------

struct EpisodeLog {
  Trajectory cav;
  Trajectory hdv;
  std::vector<double> stage_costs;  // one per applied step
  std::vector<Vec> ais_states;      // after each encoder update (MPC only)
  std::vector<std::vector<double>> change_norms;
  std::optional<double> cav_crossing;
  std::optional<double> hdv_crossing;
  double tau_safe = kDefaultTauSafe;
  bool safe = true;
  bool hit_step_cap = false;
  ControllerKind controller = ControllerKind::kGapAcceptance;
  std::uint64_t seed = 0;
  IrlWeights hdv_weights;
  std::optional<IrlWeights> cav_weights;
  ScenarioConfig cfg;

  std::size_t steps() const { return cav.actions.size(); }
};

/// Safe iff the conflict-crossing times differ by at least tau_safe; a
/// vehicle that never reaches the conflict point cannot conflict.
inline bool is_safe(std::optional<double> t_cav, std::optional<double> t_hdv, double tau_safe) {
  if (!t_cav || !t_hdv) return true;
  return std::abs(*t_cav - *t_hdv) >= tau_safe;
}

inline bool is_safe(const EpisodeLog& log, double tau_safe) {
  return is_safe(conflict_crossing_time(log.cav, log.cfg.z_c),
                 conflict_crossing_time(log.hdv, log.cfg.z_c), tau_safe);
}

inline Observation observe(const VehicleState& cav, double u1_prev, const VehicleState& hdv,
                           double u2_prev) {
  return Observation::merge(cav.z, cav.v, u1_prev, hdv.z, hdv.v, u2_prev);
}

inline int episode_step_cap(const ScenarioConfig& cfg) {
  return static_cast<int>(std::lround(kEpisodeTimeCap / cfg.dt));
}

/// Runs one closed-loop episode until both vehicles are past z_c + 10 m or
/// the 60 s cap. The CAV action is clipped to the acceleration and speed
/// bounds before it is applied; the human driver moves forward only.
inline EpisodeLog run_episode(Controller& controller, const IrlWeights& hdv_weights,
                              const InitialConditions& init, const ScenarioConfig& cfg,
                              std::uint64_t seed = 0, double tau_safe = kDefaultTauSafe) {
  cfg.validate();
  hdv_weights.validate(cfg);
  controller.reset();
  EpisodeLog log;
  log.cfg = cfg;
  log.controller = controller.kind();
  log.seed = seed;
  log.hdv_weights = hdv_weights;
  log.tau_safe = tau_safe;
  if (auto* irl = dynamic_cast<IrlController*>(&controller)) log.cav_weights = irl->weights();
  log.cav.dt = log.hdv.dt = cfg.dt;

  VehicleState cav = init.cav;
  VehicleState hdv = init.hdv;
  double u1_prev = 0.0;
  double u2_prev = 0.0;
  log.cav.states.push_back(cav);
  log.hdv.states.push_back(hdv);
  const double z_exit = cfg.z_c + kExitMargin;
  const int cap = episode_step_cap(cfg);
  int t = 0;
  for (; t < cap; ++t) {
    if (cav.z >= z_exit && hdv.z >= z_exit) break;
    const Observation y = observe(cav, u1_prev, hdv, u2_prev);
    ControllerOutput out = controller.act({y, cav, hdv, u1_prev});
    const double u1 = clip_cav_action(cav, out.u, cfg);
    const double u2_req = hdv_action(hdv, cav, hdv_weights, cfg);
    const VehicleState cav_next = step_cav(cav, u1, cfg.dt);
    const auto [hdv_next, u2] = step_forward_only(hdv, u2_req, cfg.dt);

    log.cav.actions.push_back(u1);
    log.hdv.actions.push_back(u2);
    log.cav.states.push_back(cav_next);
    log.hdv.states.push_back(hdv_next);
    log.stage_costs.push_back(stage_cost(cav_next, u1, hdv_next.z, hdv_next.v, cfg));
    if (out.ais_state) log.ais_states.push_back(std::move(*out.ais_state));
    if (!out.change_norms.empty()) log.change_norms.push_back(std::move(out.change_norms));
    cav = cav_next;
    hdv = hdv_next;
    u1_prev = u1;
    u2_prev = u2;
  }
  log.hit_step_cap = t >= cap && !(cav.z >= z_exit && hdv.z >= z_exit);
  log.cav_crossing = conflict_crossing_time(log.cav, cfg.z_c);
  log.hdv_crossing = conflict_crossing_time(log.hdv, cfg.z_c);
  log.safe = is_safe(log.cav_crossing, log.hdv_crossing, tau_safe);
  return log;
}

/// Converts a closed-loop log into a training episode.
inline Episode episode_from_log(const EpisodeLog& log) {
  Episode ep;
  ep.schema = Schema::kMerge;
  ep.dt = log.cfg.dt;
  const std::size_t n = log.cav.states.size();
  for (std::size_t t = 0; t < n; ++t) {
    const double u1p = t > 0 ? log.cav.actions[t - 1] : 0.0;
    const double u2p = t > 0 ? log.hdv.actions[t - 1] : 0.0;
    ep.observations.push_back(observe(log.cav.states[t], u1p, log.hdv.states[t], u2p));
  }
  ep.cav_actions = log.cav.actions;
  ep.hdv_actions = log.hdv.actions;
  ep.meta.seed = log.seed;
  ep.meta.hdv_weights = log.hdv_weights;
  ep.meta.cav_weights = log.cav_weights;
  ep.meta.hit_step_cap = log.hit_step_cap;
  return ep;
}

}  // namespace aismerge
