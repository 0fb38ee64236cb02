#pragma once

// Feature-weighted human driver: each step the driver picks the constant
// acceleration that minimizes a short rollout cost over three features
// (effort, desired-speed deviation, joint proximity to the conflict point).
// Sampling the feature weights spans conservative to aggressive styles.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "aismerge/dynamics.hpp"
#include "aismerge/errors.hpp"
#include "aismerge/random.hpp"

namespace aismerge {

inline constexpr double kProximityLength = 10.0;  // sigma_p, m
inline constexpr int kActionGridSize = 41;

struct IrlWeights {
  double theta_accel = 1.0;
  double theta_speed = 1.0;
  double theta_prox = 0.0;
  double v_des = 14.0;  // m/s
  int lookahead = 10;   // steps

  bool operator==(const IrlWeights&) const = default;

  void validate(const ScenarioConfig& cfg) const {
    if (!(theta_accel >= 0 && theta_speed >= 0 && theta_prox >= 0)) {
      throw ConfigError("irl weights: feature weights must be >= 0");
    }
    if (!(theta_accel > 0 || theta_speed > 0 || theta_prox > 0)) {
      throw ConfigError("irl weights: at least one feature weight must be positive");
    }
    if (!(v_des > 0 && v_des <= 1.5 * cfg.v_max)) {
      throw ConfigError("irl weights: require 0 < v_des <= 1.5 v_max");
    }
    if (lookahead < 1) throw ConfigError("irl weights: lookahead must be >= 1");
  }
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Per-field uniform sampling ranges for IrlWeights.
struct StyleRange {
  Interval theta_accel{0.5, 2.0};
  Interval theta_speed{0.5, 8.0};
  Interval theta_prox{0.0, 60.0};
  Interval v_des{9.8, 16.8};
  std::pair<int, int> lookahead{8, 15};

  void validate() const {
    for (const Interval& i : {theta_accel, theta_speed, theta_prox, v_des}) {
      if (!(i.lo >= 0 && i.lo <= i.hi)) throw ConfigError("style range: need 0 <= lower <= upper");
    }
    if (!(lookahead.first >= 1 && lookahead.first <= lookahead.second)) {
      throw ConfigError("style range: need 1 <= lookahead lower <= upper");
    }
  }
};

inline IrlWeights sample_irl_weights(Rng& rng, const StyleRange& range) {
  IrlWeights w;
  w.theta_accel = uniform(rng, range.theta_accel.lo, range.theta_accel.hi);
  w.theta_speed = uniform(rng, range.theta_speed.lo, range.theta_speed.hi);
  w.theta_prox = uniform(rng, range.theta_prox.lo, range.theta_prox.hi);
  w.v_des = uniform(rng, range.v_des.lo, range.v_des.hi);
  w.lookahead = uniform_int(rng, range.lookahead.first, range.lookahead.second);
  return w;
}

inline IrlWeights sample_irl_weights(std::uint64_t seed, const StyleRange& range) {
  range.validate();
  Rng rng(seed);
  return sample_irl_weights(rng, range);
}

/// Forward-only double integrator: if the step would reverse the vehicle the
/// applied acceleration is reduced so the speed stops exactly at zero.
/// Returns the next state and the acceleration actually applied.
inline std::pair<VehicleState, double> step_forward_only(const VehicleState& x, double a,
                                                         double dt) {
  const double applied = (x.v + dt * a < 0.0) ? -x.v / dt : a;
  VehicleState next = step_cav(x, applied, dt);
  next.v = std::max(next.v, 0.0);
  return {next, applied};
}

inline double proximity_feature(double z_self, double z_other, double z_c) {
  const double ds = z_self - z_c;
  const double dq = z_other - z_c;
  return std::exp(-(ds * ds + dq * dq) / (kProximityLength * kProximityLength));
}

/// Rollout cost of holding acceleration `a` for w.lookahead steps while the
/// other vehicle keeps its current speed.
inline double rollout_cost(const VehicleState& self, const VehicleState& other,
                           const IrlWeights& w, const ScenarioConfig& cfg, double a) {
  VehicleState s = self;
  double cost = 0.0;
  for (int k = 1; k <= w.lookahead; ++k) {
    s = step_forward_only(s, a, cfg.dt).first;
    const double z_other = other.z + k * cfg.dt * other.v;
    const double dv = s.v - w.v_des;
    cost += w.theta_accel * a * a + w.theta_speed * dv * dv +
            w.theta_prox * proximity_feature(s.z, z_other, cfg.z_c);
  }
  return cost;
}

inline std::array<double, kActionGridSize> action_grid(const ScenarioConfig& cfg) {
  std::array<double, kActionGridSize> g{};
  for (int i = 0; i < kActionGridSize; ++i) {
    g[i] = cfg.u_min + (cfg.u_max - cfg.u_min) * i / (kActionGridSize - 1);
  }
  return g;
}

/// Exhaustive grid minimizer of rollout_cost. Ties go to the smaller |a|
/// (then to the smaller a).
inline double hdv_action(const VehicleState& self, const VehicleState& other,
                         const IrlWeights& w, const ScenarioConfig& cfg) {
  auto grid = action_grid(cfg);
  std::sort(grid.begin(), grid.end(), [](double a, double b) {
    return std::abs(a) != std::abs(b) ? std::abs(a) < std::abs(b) : a < b;
  });
  double best_a = grid.front();
  double best_cost = rollout_cost(self, other, w, cfg, best_a);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double c = rollout_cost(self, other, w, cfg, grid[i]);
    if (c < best_cost) {
      best_cost = c;
      best_a = grid[i];
    }
  }
  return best_a;
}

/// One human-driver step. No upper speed clamp.
inline std::pair<VehicleState, double> step_hdv(const VehicleState& self,
                                                const VehicleState& other, const IrlWeights& w,
                                                const ScenarioConfig& cfg) {
  return step_forward_only(self, hdv_action(self, other, w, cfg), cfg.dt);
}

/// Named driver style together with its nominal encounter geometry. Both
/// presets share the geometry (automated vehicle 12 m ahead, equal speeds),
/// so the outcome is decided by the driver style.
struct DriverPreset {
  std::string name;
  IrlWeights weights;
  VehicleState cav0;
  VehicleState hdv0;
};

inline DriverPreset aggressive_preset(const ScenarioConfig& cfg) {
  IrlWeights w;
  w.theta_accel = 1.0;
  w.theta_speed = 8.0;
  w.theta_prox = 2.0;
  w.v_des = 1.2 * cfg.v_max;
  w.lookahead = 10;
  return {"aggressive", w, {6.0, 10.0}, {-6.0, 10.0}};
}

inline DriverPreset conservative_preset(const ScenarioConfig& cfg) {
  IrlWeights w;
  w.theta_accel = 1.0;
  w.theta_speed = 1.0;
  w.theta_prox = 60.0;
  w.v_des = 0.7 * cfg.v_max;
  w.lookahead = 10;
  return {"conservative", w, {6.0, 10.0}, {-6.0, 10.0}};
}

}  // namespace aismerge
