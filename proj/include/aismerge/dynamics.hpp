#pragma once

// Longitudinal kinematics of the two merging vehicles.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "aismerge/errors.hpp"

namespace aismerge {

/// Longitudinal state of one point vehicle. Position is measured from the
/// control-zone entry and may be negative upstream of it.
struct VehicleState {
  double z = 0.0;  // m
  double v = 0.0;  // m/s

  bool operator==(const VehicleState&) const = default;
};

/// Scenario geometry, sampling, bounds and controller weights. Defaults are
/// the published merging parameters.
struct ScenarioConfig {
  double L_c = 70.0;   // control-zone length, m
  double z_c = 70.0;   // conflict-point position, m
  double dt = 0.2;     // sampling interval, s
  double v_min = 0.0;  // m/s
  double v_max = 14.0;
  double u_min = -3.0;  // m/s^2
  double u_max = 2.0;
  double w1 = 1.0;  // control effort
  double w2 = 10.0;  // speed tracking
  double w3 = 1000.0;  // collision log-barrier
  double rho = 1.0;  // reaction-delay extrapolation, s
  int H = 10;  // horizon, steps

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("scenario: " + m); };
    for (double x : {L_c, z_c, dt, v_min, v_max, u_min, u_max, w1, w2, w3, rho}) {
      if (!std::isfinite(x)) fail("non-finite parameter");
    }
    if (!(0.0 <= v_min && v_min < v_max)) fail("require 0 <= v_min < v_max");
    if (!(u_min < 0.0 && 0.0 < u_max)) fail("require u_min < 0 < u_max");
    if (!(w1 > 0 && w2 > 0 && w3 > 0)) fail("weights must be positive");
    if (!(rho > 0)) fail("rho must be positive");
    if (H < 1) fail("H must be >= 1");
    if (!(dt > 0)) fail("dt must be positive");
    if (!(0 < z_c && z_c <= L_c)) fail("require 0 < z_c <= L_c");
  }
};

/// Time-ordered states with the accelerations applied between them.
struct Trajectory {
  std::vector<VehicleState> states;
  std::vector<double> actions;  // size() == states.size() - 1
  double dt = 0.2;

  bool consistent() const {
    return !states.empty() && actions.size() + 1 == states.size() && dt > 0;
  }
};

/// Exact double-integrator update. Bounds are not enforced here.
inline VehicleState step_cav(const VehicleState& x, double u, double dt) {
  if (!std::isfinite(x.z) || !std::isfinite(x.v) || !std::isfinite(u) || !std::isfinite(dt)) {
    throw InvalidInputError("step_cav: non-finite input");
  }
  if (!(dt > 0)) throw InvalidInputError("step_cav: dt must be positive");
  return {x.z + dt * x.v + 0.5 * dt * dt * u, x.v + dt * u};
}

enum class Bound { kVMin, kVMax, kUMin, kUMax };

inline const char* to_string(Bound b) {
  switch (b) {
    case Bound::kVMin: return "v_min";
    case Bound::kVMax: return "v_max";
    case Bound::kUMin: return "u_min";
    case Bound::kUMax: return "u_max";
  }
  return "?";
}

struct Feasibility {
  bool feasible = true;
  std::vector<Bound> violated;
};

// Closed intervals: the boundary values themselves are feasible.
inline Feasibility check_bounds(const VehicleState& x, double u, const ScenarioConfig& cfg) {
  Feasibility f;
  if (x.v < cfg.v_min) f.violated.push_back(Bound::kVMin);
  if (x.v > cfg.v_max) f.violated.push_back(Bound::kVMax);
  if (u < cfg.u_min) f.violated.push_back(Bound::kUMin);
  if (u > cfg.u_max) f.violated.push_back(Bound::kUMax);
  f.feasible = f.violated.empty();
  return f;
}

/// First time the position sequence reaches z_c, linearly interpolated
/// between samples. Empty if the vehicle never gets there.
inline std::optional<double> conflict_crossing_time(const std::vector<double>& z, double dt,
                                                    double z_c) {
  if (z.empty()) return std::nullopt;
  if (z.front() >= z_c) return 0.0;
  for (std::size_t i = 1; i < z.size(); ++i) {
    if (z[i] >= z_c) {
      const double frac = (z_c - z[i - 1]) / (z[i] - z[i - 1]);
      return (static_cast<double>(i - 1) + frac) * dt;
    }
  }
  return std::nullopt;
}

inline std::optional<double> conflict_crossing_time(const Trajectory& traj, double z_c) {
  if (traj.states.empty()) throw InvalidInputError("conflict_crossing_time: empty trajectory");
  std::vector<double> z;
  z.reserve(traj.states.size());
  for (const auto& s : traj.states) z.push_back(s.z);
  return conflict_crossing_time(z, traj.dt, z_c);
}

}  // namespace aismerge
