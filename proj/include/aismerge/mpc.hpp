#pragma once

// Receding-horizon controller for the automated vehicle.
//
// Horizon problem: minimize over u in [u_min, u_max]^H
//   sum_k  w1 u_k^2 + w2 (v_{k+1} - v_max)^2
//          - w3 log((z_{k+1} - z_c + rho v_{k+1})^2 + (zh_{k+1} - z_c + rho vh_{k+1})^2 + eps)
//          + mu (max(0, v_{k+1} - v_max)^2 + max(0, v_min - v_{k+1})^2)
// with the own states eliminated through the double integrator (single
// shooting) and the human driver's (zh, vh) held fixed at the prediction.
// Solved by projected gradient with Barzilai-Borwein trial steps and an
// Armijo backtracking search along the projection arc.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "aismerge/ais.hpp"
#include "aismerge/dynamics.hpp"
#include "aismerge/errors.hpp"

namespace aismerge {

inline constexpr double kLogEpsilon = 1e-6;
inline constexpr double kSpeedPenalty = 1e4;

using ControlSequence = Vec;

/// Per-step cost of the automated vehicle given its next state, the applied
/// acceleration and the human driver's predicted next state.
inline double stage_cost(const VehicleState& x1_next, double u1, double z2_hat, double v2_hat,
                         const ScenarioConfig& cfg) {
  const double a = x1_next.z - cfg.z_c + cfg.rho * x1_next.v;
  const double b = z2_hat - cfg.z_c + cfg.rho * v2_hat;
  const double dv = x1_next.v - cfg.v_max;
  return cfg.w1 * u1 * u1 + cfg.w2 * dv * dv - cfg.w3 * std::log(a * a + b * b + kLogEpsilon);
}

struct MpcOptions {
  int max_iterations = 500;
  double tolerance = 1e-6;  // on the projected-gradient norm
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  double speed_penalty = kSpeedPenalty;
};

struct MpcSolution {
  ControlSequence u;
  std::vector<VehicleState> states;  // H + 1 entries, states[0] = x1
  double objective = 0.0;
  int iterations = 0;
  double pg_norm = 0.0;
  bool converged = false;
};

/// Single-shooting horizon objective with an adjoint gradient.
class HorizonProblem {
 public:
  HorizonProblem(const VehicleState& x1, const HorizonPrediction& pred, const ScenarioConfig& cfg,
                 const MpcOptions& opt = {})
      : x1_(x1), pred_(pred), cfg_(cfg), opt_(opt) {
    if (pred.z_hat.size() != cfg.H || pred.v_hat.size() != cfg.H) {
      throw ShapeError("horizon problem: prediction length must equal H");
    }
  }

  int horizon() const { return cfg_.H; }
  const ScenarioConfig& config() const { return cfg_; }

  std::vector<VehicleState> rollout(const ControlSequence& u) const {
    std::vector<VehicleState> xs;
    xs.reserve(static_cast<std::size_t>(cfg_.H) + 1);
    xs.push_back(x1_);
    for (int k = 0; k < cfg_.H; ++k) xs.push_back(step_cav(xs.back(), u[k], cfg_.dt));
    return xs;
  }

  double objective(const ControlSequence& u) const { return evaluate(u, nullptr); }

  double objective_and_gradient(const ControlSequence& u, ControlSequence& grad) const {
    return evaluate(u, &grad);
  }

  ControlSequence project(ControlSequence u) const {
    return u.cwiseMax(cfg_.u_min).cwiseMin(cfg_.u_max);
  }

  double speed_violation(const ControlSequence& u) const {
    double worst = 0.0;
    for (const auto& x : rollout(u)) {
      worst = std::max({worst, x.v - cfg_.v_max, cfg_.v_min - x.v});
    }
    return worst;
  }

 private:
  double evaluate(const ControlSequence& u, ControlSequence* grad) const {
    if (u.size() != cfg_.H) throw ShapeError("horizon problem: control length must equal H");
    const int H = cfg_.H;
    const double dt = cfg_.dt;
    const double mu = opt_.speed_penalty;
    double z = x1_.z;
    double v = x1_.v;
    double total = 0.0;
    // d(stage k)/d(z_{k+1}), d(stage k)/d(v_{k+1})
    double gz[64];
    double gv[64];
    std::vector<double> gz_big, gv_big;
    double* pz = gz;
    double* pv = gv;
    if (H > 64) {
      gz_big.resize(static_cast<std::size_t>(H));
      gv_big.resize(static_cast<std::size_t>(H));
      pz = gz_big.data();
      pv = gv_big.data();
    }
    for (int k = 0; k < H; ++k) {
      const double uk = u[k];
      z = z + dt * v + 0.5 * dt * dt * uk;
      v = v + dt * uk;
      const double a = z - cfg_.z_c + cfg_.rho * v;
      const double b = pred_.z_hat[k] - cfg_.z_c + cfg_.rho * pred_.v_hat[k];
      const double D = a * a + b * b + kLogEpsilon;
      const double over = std::max(0.0, v - cfg_.v_max);
      const double under = std::max(0.0, cfg_.v_min - v);
      const double dv = v - cfg_.v_max;
      total += cfg_.w1 * uk * uk + cfg_.w2 * dv * dv - cfg_.w3 * std::log(D) +
               mu * (over * over + under * under);
      if (grad) {
        pz[k] = -cfg_.w3 * 2.0 * a / D;
        pv[k] = 2.0 * cfg_.w2 * dv - cfg_.w3 * 2.0 * a * cfg_.rho / D + 2.0 * mu * over -
                2.0 * mu * under;
      }
    }
    if (grad) {
      grad->resize(H);
      // Adjoint sweep: lz, lv are d(sum of stages >= k)/d(z_{k+1}), d(v_{k+1}).
      double lz = 0.0;
      double lv = 0.0;
      for (int k = H - 1; k >= 0; --k) {
        lz += pz[k];
        lv += pv[k];
        (*grad)[k] = 2.0 * cfg_.w1 * u[k] + 0.5 * dt * dt * lz + dt * lv;
        // z_{k+1} = z_k + dt v_k + ..., v_{k+1} = v_k + dt u_k
        lv += dt * lz;
      }
    }
    return total;
  }

  VehicleState x1_;
  HorizonPrediction pred_;
  ScenarioConfig cfg_;
  MpcOptions opt_;
};

inline MpcSolution solve_mpc(const VehicleState& x1, const HorizonPrediction& pred,
                             const ScenarioConfig& cfg, const ControlSequence& u_init,
                             const MpcOptions& opt = {}) {
  if (u_init.size() != cfg.H) throw ShapeError("solve_mpc: u_init length must equal H");
  const HorizonProblem prob(x1, pred, cfg, opt);

  ControlSequence u = prob.project(u_init);
  ControlSequence g;
  double f = prob.objective_and_gradient(u, g);
  if (!std::isfinite(f)) throw SolverError("solve_mpc: non-finite objective at initial controls");

  MpcSolution sol;
  double alpha = 1.0 / std::max(1.0, g.lpNorm<Eigen::Infinity>());
  ControlSequence u_prev, g_prev;
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    sol.pg_norm = (prob.project(u - g) - u).norm();
    if (sol.pg_norm < opt.tolerance) {
      sol.converged = true;
      break;
    }
    if (it > 0) {
      const ControlSequence s = u - u_prev;
      const ControlSequence y = g - g_prev;
      const double sy = s.dot(y);
      if (sy > 0.0) alpha = std::clamp(s.squaredNorm() / sy, 1e-10, 1e10);
    }
    bool accepted = false;
    ControlSequence u_new;
    double f_new = f;
    for (int ls = 0; ls < 60; ++ls) {
      u_new = prob.project(u - alpha * g);
      f_new = prob.objective(u_new);
      if (std::isfinite(f_new) && f_new <= f + opt.armijo_c * g.dot(u_new - u)) {
        accepted = true;
        break;
      }
      alpha *= opt.backtrack;
    }
    if (!accepted || u_new == u) break;  // no further descent representable
    u_prev = u;
    g_prev = g;
    u = u_new;
    f = prob.objective_and_gradient(u, g);
  }
  if (it >= opt.max_iterations) sol.pg_norm = (prob.project(u - g) - u).norm();
  sol.iterations = it;
  sol.u = u;
  sol.objective = f;
  sol.states = prob.rollout(u);
  return sol;
}

struct IterativeMpcDiagnostics {
  std::vector<double> change_norms;  // ||u^(j) - u^(j-1)||, j = 1..j_max
  std::vector<MpcSolution> solutions;
  std::vector<HorizonPrediction> predictions;
};

template <class P>
struct IterativeMpcResult {
  double u = 0.0;
  typename P::State state;
  IterativeMpcDiagnostics diagnostics;
};

/// One control step: fold the new observation into the information state,
/// then alternate prediction and horizon solves j_max times starting from
/// all-zero controls. Returns the first control of the last iterate.
template <Predictor P>
IterativeMpcResult<P> iterative_mpc_step(const P& model, const typename P::State& s_prev,
                                         const Observation& y, double u_prev,
                                         const ScenarioConfig& cfg, int j_max,
                                         const MpcOptions& opt = {}) {
  if (j_max < 1) throw ConfigError("iterative_mpc_step: j_max must be >= 1");
  if (!is_merge(model.variant())) throw ConfigError("iterative_mpc_step: needs a merge model");
  IterativeMpcResult<P> out;
  out.state = model.encode(s_prev, y, Vec::Constant(1, u_prev));
  const VehicleState x1{y[merge_obs::kZ1], y[merge_obs::kV1]};
  ControlSequence u = ControlSequence::Zero(cfg.H);
  for (int j = 1; j <= j_max; ++j) {
    HorizonPrediction pred = model.decode(out.state, Vec::Constant(1, u[0]));
    MpcSolution sol = solve_mpc(x1, pred, cfg, u, opt);
    out.diagnostics.change_norms.push_back((sol.u - u).norm());
    u = sol.u;
    out.diagnostics.predictions.push_back(std::move(pred));
    out.diagnostics.solutions.push_back(std::move(sol));
  }
  out.u = u[0];
  return out;
}

}  // namespace aismerge
