#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "aismerge/human_driver.hpp"

using namespace aismerge;

namespace {

IrlWeights only(double accel, double speed, double prox, double v_des, int lookahead) {
  IrlWeights w;
  w.theta_accel = accel;
  w.theta_speed = speed;
  w.theta_prox = prox;
  w.v_des = v_des;
  w.lookahead = lookahead;
  return w;
}

// Independent oracle: evaluate every grid candidate, keep the lowest cost,
// break exact ties toward the smaller |a|.
double brute_force(const VehicleState& self, const VehicleState& other, const IrlWeights& w,
                   const ScenarioConfig& cfg) {
  double best_a = 0, best_c = INFINITY;
  for (int i = 0; i < kActionGridSize; ++i) {
    const double a = cfg.u_min + (cfg.u_max - cfg.u_min) * i / (kActionGridSize - 1);
    VehicleState s = self;
    double cost = 0;
    for (int k = 1; k <= w.lookahead; ++k) {
      double applied = a;
      if (s.v + cfg.dt * a < 0) applied = -s.v / cfg.dt;
      s = {s.z + cfg.dt * s.v + 0.5 * cfg.dt * cfg.dt * applied, std::max(0.0, s.v + cfg.dt * applied)};
      const double zo = other.z + k * cfg.dt * other.v;
      const double p = std::exp(-((s.z - cfg.z_c) * (s.z - cfg.z_c) + (zo - cfg.z_c) * (zo - cfg.z_c)) / 100.0);
      cost += w.theta_accel * a * a + w.theta_speed * (s.v - w.v_des) * (s.v - w.v_des) + w.theta_prox * p;
    }
    if (cost < best_c || (cost == best_c && std::abs(a) < std::abs(best_a))) {
      best_c = cost;
      best_a = a;
    }
  }
  return best_a;
}

}  // namespace

TEST(SampleIrlWeights, Deterministic) {
  const StyleRange r;
  const IrlWeights a = sample_irl_weights(42, r);
  const IrlWeights b = sample_irl_weights(42, r);
  EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0);
  EXPECT_FALSE(sample_irl_weights(43, r) == a);
}

TEST(SampleIrlWeights, DegenerateRangeReturnsBounds) {
  StyleRange r;
  r.theta_accel = {1.5, 1.5};
  r.theta_speed = {2.5, 2.5};
  r.theta_prox = {3.5, 3.5};
  r.v_des = {11.0, 11.0};
  r.lookahead = {7, 7};
  const IrlWeights w = sample_irl_weights(9, r);
  EXPECT_EQ(w.theta_accel, 1.5);
  EXPECT_EQ(w.theta_speed, 2.5);
  EXPECT_EQ(w.theta_prox, 3.5);
  EXPECT_EQ(w.v_des, 11.0);
  EXPECT_EQ(w.lookahead, 7);
}

TEST(SampleIrlWeights, UniformMean) {
  StyleRange r;
  r.theta_prox = {10.0, 50.0};
  double sum = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const IrlWeights w = sample_irl_weights(derive_seed(2024, {s}), r);
    EXPECT_GE(w.theta_prox, 10.0);
    EXPECT_LE(w.theta_prox, 50.0);
    sum += w.theta_prox;
  }
  EXPECT_NEAR(sum / 1000.0, 30.0, 0.05 * 30.0);
}

TEST(SampleIrlWeights, RejectsInvalidRange) {
  StyleRange r;
  r.theta_speed = {3.0, 1.0};
  EXPECT_THROW(sample_irl_weights(1, r), ConfigError);
  r = StyleRange{};
  r.lookahead = {0, 4};
  EXPECT_THROW(sample_irl_weights(1, r), ConfigError);
}

TEST(IrlWeights, Validation) {
  const ScenarioConfig cfg;
  EXPECT_NO_THROW(only(1, 0, 0, 14, 1).validate(cfg));
  EXPECT_THROW(only(0, 0, 0, 14, 1).validate(cfg), ConfigError);
  EXPECT_THROW(only(-1, 1, 0, 14, 1).validate(cfg), ConfigError);
  EXPECT_THROW(only(1, 1, 0, 0, 1).validate(cfg), ConfigError);
  EXPECT_THROW(only(1, 1, 0, 21.5, 1).validate(cfg), ConfigError);
  EXPECT_NO_THROW(only(1, 1, 0, 21.0, 1).validate(cfg));
  EXPECT_THROW(only(1, 1, 0, 14, 0).validate(cfg), ConfigError);
}

TEST(HdvAction, SaturatesAtUpperBound) {
  const ScenarioConfig cfg;
  const IrlWeights w = only(0, 1, 0, 12, 1);
  const VehicleState self{0, 10};
  const VehicleState other{-100, 10};
  EXPECT_DOUBLE_EQ(hdv_action(self, other, w, cfg), 2.0);
  EXPECT_DOUBLE_EQ(brute_force(self, other, w, cfg), 2.0);
}

TEST(HdvAction, PureEffortPenaltyGivesZero) {
  const ScenarioConfig cfg;
  EXPECT_EQ(hdv_action({0, 10}, {0, 10}, only(1, 0, 0, 14, 10), cfg), 0.0);
}

TEST(HdvAction, AtDesiredSpeedGivesZero) {
  const ScenarioConfig cfg;
  EXPECT_EQ(hdv_action({0, 12}, {-50, 10}, only(0, 1, 0, 12, 10), cfg), 0.0);
}

TEST(HdvAction, MatchesGridOracle) {
  const ScenarioConfig cfg;
  const StyleRange r;
  Rng rng(31);
  for (int i = 0; i < 300; ++i) {
    const IrlWeights w = sample_irl_weights(rng, r);
    const VehicleState self{uniform(rng, -10, 90), uniform(rng, 0, 16)};
    const VehicleState other{uniform(rng, -10, 90), uniform(rng, 0, 16)};
    const double a = hdv_action(self, other, w, cfg);
    EXPECT_EQ(a, brute_force(self, other, w, cfg));
    const double c = rollout_cost(self, other, w, cfg, a);
    for (double cand : action_grid(cfg)) EXPECT_LE(c, rollout_cost(self, other, w, cfg, cand));
  }
}

TEST(HdvAction, MoreSpeedWeightNeverAcceleratesLess) {
  const ScenarioConfig cfg;
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const VehicleState self{uniform(rng, -10, 90), uniform(rng, 0, 10)};
    const VehicleState other{uniform(rng, -10, 90), uniform(rng, 0, 16)};
    IrlWeights w = only(uniform(rng, 0.2, 3), 0.1, uniform(rng, 0, 50), uniform(rng, 11, 16), 10);
    double prev = hdv_action(self, other, w, cfg);
    for (double ts : {0.5, 1.0, 2.0, 5.0, 10.0, 50.0}) {
      w.theta_speed = ts;
      const double a = hdv_action(self, other, w, cfg);
      EXPECT_GE(a, prev) << "theta_speed " << ts;
      prev = a;
    }
  }
}

TEST(StepHdv, ZeroActionAdvancesAtConstantSpeed) {
  const ScenarioConfig cfg;
  const auto [x, a] = step_hdv({3.0, 9.0}, {-50, 10}, only(1, 0, 0, 14, 5), cfg);
  EXPECT_EQ(a, 0.0);
  EXPECT_DOUBLE_EQ(x.z, 3.0 + 0.2 * 9.0);
  EXPECT_DOUBLE_EQ(x.v, 9.0);
}

TEST(StepHdv, ForwardMotionClamp) {
  const auto [x, applied] = step_forward_only({0.0, 0.1}, -3.0, 0.2);
  EXPECT_EQ(x.v, 0.0);
  EXPECT_NEAR(applied, -0.5, 1e-12);
  EXPECT_NEAR(x.z, 0.01, 1e-12);
}

TEST(StepHdv, DeterministicAndNeverNegative) {
  const ScenarioConfig cfg;
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const IrlWeights w = sample_irl_weights(rng, StyleRange{});
    VehicleState self{uniform(rng, -10, 60), uniform(rng, 0, 2)};
    const VehicleState other{uniform(rng, 40, 80), uniform(rng, 5, 14)};
    const auto r1 = step_hdv(self, other, w, cfg);
    const auto r2 = step_hdv(self, other, w, cfg);
    EXPECT_EQ(r1, r2);
    EXPECT_GE(r1.first.v, 0.0);
  }
}

TEST(Presets, StylesDifferAsNamed) {
  const ScenarioConfig cfg;
  const DriverPreset a = aggressive_preset(cfg);
  const DriverPreset c = conservative_preset(cfg);
  EXPECT_GT(a.weights.theta_speed, c.weights.theta_speed);
  EXPECT_LT(a.weights.theta_prox, c.weights.theta_prox);
  EXPECT_NEAR(a.weights.v_des, 1.2 * cfg.v_max, 1e-12);
  EXPECT_NEAR(c.weights.v_des, 0.7 * cfg.v_max, 1e-12);
  EXPECT_NO_THROW(a.weights.validate(cfg));
  EXPECT_NO_THROW(c.weights.validate(cfg));
}
