#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "aismerge/ais.hpp"

using namespace aismerge;

namespace {

Observation random_obs(Rng& rng, int width = merge_obs::kWidth) {
  Observation y;
  y.values.resize(width);
  for (int i = 0; i < width; ++i) y.values[i] = uniform(rng, -1.0, 1.0) * (i % 3 == 2 ? 2.0 : 30.0);
  return y;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("aismerge_test_" + name)).string();
}

// Gives the random model non-trivial normalization and biases so every
// parameter carries a gradient.
AisModel busy_model(Variant v, std::uint64_t seed) {
  AisModel m = AisModel::random(v, 10, 0.2, seed);
  Rng rng(seed + 1);
  m.for_each_param([&](const std::string& name, auto& a) {
    if (name.find("bias") != std::string::npos || name.find(".b_") != std::string::npos) {
      for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = uniform(rng, -0.3, 0.3);
    }
  });
  const Dimensions d = m.dims();
  m.input_norm.scale = Vec::Constant(d.observation, 20.0);
  m.output_norm.offset = Vec::Constant(d.output, 1.0);
  m.output_norm.scale = Vec::Constant(d.output, 0.5);
  return m;
}

}  // namespace

TEST(AisModel, InitStateIsZeroOfHiddenWidth) {
  const AisModel merge = AisModel::random(Variant::kMerge, 10, 0.2, 1);
  const AisModel ngsim = AisModel::random(Variant::kNgsim, 10, 0.2, 1);
  EXPECT_EQ(merge.init_state().s, Vec::Zero(4));
  EXPECT_EQ(ngsim.init_state().s, Vec::Zero(24));
  EXPECT_EQ(merge.init_state(), merge.init_state());
}

TEST(AisModel, DimensionTables) {
  const Dimensions m = dimensions(Variant::kMerge, 10);
  EXPECT_EQ(m.observation, 6);
  EXPECT_EQ(m.enc1, 8);
  EXPECT_EQ(m.enc2, 16);
  EXPECT_EQ(m.hidden, 4);
  EXPECT_EQ(m.hidden + m.actions, 5);
  EXPECT_EQ(m.dec1, 2);
  EXPECT_EQ(m.dec2, 4);
  EXPECT_EQ(m.output, 20);
  EXPECT_EQ(dimensions(Variant::kMergePositions, 10).output, 10);
  const Dimensions n = dimensions(Variant::kNgsim, 1);
  EXPECT_EQ(n.observation, 9);
  EXPECT_EQ(n.hidden, 24);
  EXPECT_EQ(n.hidden + n.actions, 27);
  EXPECT_EQ(n.dec1, 32);
  EXPECT_EQ(n.dec2, 64);
  EXPECT_EQ(n.output, 2);
  const AisModel model = AisModel::random(Variant::kMerge, 10, 0.2, 3);
  EXPECT_EQ(model.enc1.weight.rows(), 8);
  EXPECT_EQ(model.enc1.weight.cols(), 6);
  EXPECT_EQ(model.dec1.weight.cols(), 5);
  EXPECT_EQ(model.dec3.weight.rows(), 20);
}

TEST(AisModel, EncodeIsDeterministic) {
  const AisModel m = AisModel::random(Variant::kMerge, 10, 0.2, 5);
  Rng rng(1);
  const Observation y = random_obs(rng);
  const AisState s{Vec::Constant(4, 0.3)};
  EXPECT_EQ(m.encode(s, y, 0.7), m.encode(s, y, 0.7));
}

TEST(AisModel, ZeroModelHalvesState) {
  const AisModel m = AisModel::zeros(Variant::kMerge, 10, 0.2);
  Rng rng(2);
  AisState s{Vec(4)};
  s.s << 0.8, -0.4, 0.2, 1.0;
  EXPECT_TRUE(m.encode(s, random_obs(rng), 1.3).s.isApprox(s.s / 2.0, 1e-15));
}

TEST(AisModel, EncodeStaysFiniteAndBounded) {
  const AisModel m = AisModel::random(Variant::kNgsim, 1, 0.2, 6);
  Rng rng(3);
  AisState s = m.init_state();
  for (int t = 0; t < 100; ++t) {
    const AisState next = m.encode(s, random_obs(rng, 9), Vec::Constant(3, uniform(rng, -3, 2)));
    ASSERT_TRUE(next.s.allFinite());
    for (Eigen::Index i = 0; i < next.s.size(); ++i) {
      EXPECT_LE(std::abs(next.s[i]), std::max(std::abs(s.s[i]), 1.0) + 1e-15);
    }
    s = next;
  }
}

TEST(AisModel, DecodeDeterministicAndZeroModel) {
  const AisModel m = AisModel::random(Variant::kMerge, 10, 0.2, 7);
  const AisState s{Vec::Constant(4, -0.2)};
  const HorizonPrediction a = m.decode(s, 0.5);
  const HorizonPrediction b = m.decode(s, 0.5);
  EXPECT_EQ(a.z_hat, b.z_hat);
  EXPECT_EQ(a.v_hat, b.v_hat);
  const AisModel z = AisModel::zeros(Variant::kMerge, 10, 0.2);
  const HorizonPrediction p = z.decode(s, 0.5);
  EXPECT_TRUE(p.z_hat.isZero());
  EXPECT_TRUE(p.v_hat.isZero());
}

TEST(AisModel, HorizonLengthIsAlwaysH) {
  Rng rng(8);
  for (int H : {1, 5, 10, 17}) {
    const AisModel m = AisModel::random(Variant::kMerge, H, 0.2, 9);
    for (int i = 0; i < 20; ++i) {
      AisState s{Vec(4)};
      for (int k = 0; k < 4; ++k) s.s[k] = uniform(rng, -1, 1);
      const HorizonPrediction p = m.decode(s, uniform(rng, -3, 2));
      EXPECT_EQ(p.z_hat.size(), H);
      EXPECT_EQ(p.v_hat.size(), H);
    }
  }
}

TEST(AisModel, PositionsVariantDifferencesSpeeds) {
  AisModel m = AisModel::zeros(Variant::kMergePositions, 4, 0.5);
  m.dec3.bias << 1.0, 2.0, 4.0, 7.0;
  const HorizonPrediction p = m.decode(m.init_state(), 0.0);
  EXPECT_EQ(p.z_hat.size(), 4);
  EXPECT_DOUBLE_EQ(p.v_hat[1], 2.0);
  EXPECT_DOUBLE_EQ(p.v_hat[2], 4.0);
  EXPECT_DOUBLE_EQ(p.v_hat[3], 6.0);
  EXPECT_DOUBLE_EQ(p.v_hat[0], p.v_hat[1]);
}

TEST(AisModel, ActionSlotsComeFromUPrev) {
  const AisModel m = AisModel::random(Variant::kMerge, 10, 0.2, 10);
  Observation a = Observation::merge(1, 2, 0.5, 4, 5, 6);
  Observation b = Observation::merge(1, 2, -1.0, 4, 5, 6);
  EXPECT_EQ(m.encode(m.init_state(), a, 0.25), m.encode(m.init_state(), b, 0.25));
}

TEST(AisModel, ShapeErrors) {
  const AisModel m = AisModel::random(Variant::kMerge, 10, 0.2, 11);
  Rng rng(4);
  EXPECT_THROW(m.encode(m.init_state(), random_obs(rng, 9), 0.0), ShapeError);
  EXPECT_THROW(m.encode(AisState{Vec::Zero(3)}, random_obs(rng), 0.0), ShapeError);
  EXPECT_THROW(m.encode(m.init_state(), random_obs(rng), Vec::Zero(3)), ShapeError);
  EXPECT_THROW(m.decode(AisState{Vec::Zero(5)}, 0.0), ShapeError);
}

TEST(AisModel, PrefixReplayMatchesFullReplay) {
  const AisModel m = AisModel::random(Variant::kMerge, 10, 0.2, 12);
  Rng rng(5);
  std::vector<Observation> ys;
  std::vector<double> us;
  for (int t = 0; t < 30; ++t) {
    ys.push_back(random_obs(rng));
    us.push_back(uniform(rng, -3, 2));
  }
  std::vector<AisState> full;
  AisState s = m.init_state();
  for (int t = 0; t < 30; ++t) full.push_back(s = m.encode(s, ys[t], us[t]));
  for (int len : {1, 7, 18}) {
    AisState p = m.init_state();
    for (int t = 0; t < len; ++t) p = m.encode(p, ys[t], us[t]);
    EXPECT_EQ(p, full[len - 1]);
  }
}

TEST(AisGraph, BackwardBeforeForwardIsUsageError) {
  const AisModel m = AisModel::random(Variant::kMerge, 10, 0.2, 13);
  AisModel g = m.zeros_like();
  const AisGraph graph(m);
  EXPECT_THROW(graph.backward(g), UsageError);
}

TEST(AisGraph, ForwardMatchesEncodeDecode) {
  const AisModel m = busy_model(Variant::kMerge, 14);
  Rng rng(6);
  AisGraph g(m);
  AisState s = m.init_state();
  double loss = 0;
  for (int t = 0; t < 5; ++t) {
    const Observation y = random_obs(rng);
    const Vec up = Vec::Constant(1, uniform(rng, -3, 2));
    const Vec u = Vec::Constant(1, uniform(rng, -3, 2));
    Vec target(20);
    for (int k = 0; k < 20; ++k) target[k] = uniform(rng, -2, 2);
    g.step(y, up, &u, &target);
    s = m.encode(s, y, up);
    const Vec pred = m.decode_raw(s, u);
    loss += (pred - 2.0 * target).dot(pred);
  }
  EXPECT_EQ(g.state(), s.s);
  EXPECT_NEAR(g.loss(), loss, 1e-9 * std::max(1.0, std::abs(loss)));
  EXPECT_EQ(g.predictions(), 5u);
}

class AisGradient : public ::testing::TestWithParam<Variant> {};

TEST_P(AisGradient, MatchesFiniteDifferences) {
  const Variant v = GetParam();
  AisModel m = busy_model(v, 15);
  Rng rng(7);
  const int width = v == Variant::kNgsim ? 9 : 6;
  const Dimensions d = m.dims();
  struct Step {
    Observation y;
    Vec up, u, target;
    bool decode;
  };
  std::vector<Step> steps;
  for (int t = 0; t < 8; ++t) {
    Step s{random_obs(rng, width), Vec(d.actions), Vec(d.actions), Vec(d.output), t % 3 != 0};
    for (int k = 0; k < d.actions; ++k) {
      s.up[k] = uniform(rng, -3, 2);
      s.u[k] = uniform(rng, -3, 2);
    }
    for (int k = 0; k < d.output; ++k) s.target[k] = uniform(rng, -1, 3);
    steps.push_back(s);
  }
  auto run = [&](AisModel* grad) {
    AisGraph g(m);
    for (const auto& s : steps) {
      if (s.decode) g.step(s.y, s.up, &s.u, &s.target);
      else g.step(s.y, s.up);
    }
    if (grad) g.backward(*grad);
    return g.loss();
  };
  AisModel grad = m.zeros_like();
  run(&grad);
  nn::ParamStore p = nn::params_of(m);
  const nn::ParamStore gp = nn::params_of(grad);
  ASSERT_TRUE(gp.all_finite());
  nn::GradCheckOptions opt;
  opt.max_params = v == Variant::kNgsim ? 400 : 0;
  opt.seed = 99;
  // The loss is O(100), so central differences carry ~1e-9 absolute noise;
  // gradients below the floor are compared in absolute terms.
  opt.abs_floor = 1e-4;
  const auto rep = nn::finite_diff_check(p, gp, [&] { return run(nullptr); }, opt);
  EXPECT_TRUE(rep.pass) << rep.worst << " " << rep.max_rel_error;
  EXPECT_GE(rep.checked, std::min<std::size_t>(p.count(), 200));
}

INSTANTIATE_TEST_SUITE_P(Variants, AisGradient,
                         ::testing::Values(Variant::kMerge, Variant::kMergePositions, Variant::kNgsim));

TEST(Serialization, RoundTripIsBitExact) {
  AisModel m = busy_model(Variant::kMerge, 16);
  m.input_norm.offset[2] = 0.1 + 0.2;  // not representable in short decimal form
  const std::string path = temp_path("roundtrip.json");
  save_model(m, path);
  const AisModel back = load_model(path);
  nn::ParamStore a = nn::params_of(m);
  AisModel back_copy = back;
  nn::ParamStore b = nn::params_of(back_copy);
  ASSERT_EQ(a.count(), b.count());
  for (std::size_t i = 0; i < a.count(); ++i) ASSERT_EQ(a.at(i), b.at(i)) << a.name_of(i);
  EXPECT_EQ(back.input_norm.offset, m.input_norm.offset);
  EXPECT_EQ(back.output_norm.scale, m.output_norm.scale);
  Rng rng(8);
  const Observation y = random_obs(rng);
  const AisState s1 = m.encode(m.init_state(), y, 0.3);
  const AisState s2 = back.encode(back.init_state(), y, 0.3);
  EXPECT_EQ(s1, s2);
  EXPECT_EQ(m.decode_raw(s1, Vec::Constant(1, -1.0)), back.decode_raw(s2, Vec::Constant(1, -1.0)));
  std::remove(path.c_str());
}

TEST(Serialization, DocumentDescribesItself) {
  const nlohmann::json j = model_to_json(AisModel::random(Variant::kNgsim, 1, 0.1, 2));
  EXPECT_EQ(j["format_version"], kModelFormatVersion);
  EXPECT_EQ(j["variant"], "ngsim");
  EXPECT_EQ(j["H"], 1);
  EXPECT_TRUE(j.contains("dimensions"));
  EXPECT_EQ(j["parameters"][0]["name"], "encoder.0.weight");
  EXPECT_EQ(j["parameters"][0]["shape"], nlohmann::json::array({8, 9}));
}

TEST(Serialization, TamperedDimensionIsDimensionMismatch) {
  nlohmann::json j = model_to_json(AisModel::random(Variant::kMerge, 10, 0.2, 3));
  j["dimensions"]["gru"][1] = 5;
  try {
    model_from_json(j);
    FAIL();
  } catch (const ModelLoadError& e) {
    EXPECT_EQ(e.kind(), ModelLoadError::Kind::kDimensionMismatch);
  }
  j = model_to_json(AisModel::random(Variant::kMerge, 10, 0.2, 3));
  j["parameters"][2]["shape"] = {16, 9};
  try {
    model_from_json(j);
    FAIL();
  } catch (const ModelLoadError& e) {
    EXPECT_EQ(e.kind(), ModelLoadError::Kind::kDimensionMismatch);
  }
}

TEST(Serialization, VersionMismatch) {
  nlohmann::json j = model_to_json(AisModel::random(Variant::kMerge, 10, 0.2, 4));
  j["format_version"] = kModelFormatVersion + 1;
  try {
    model_from_json(j);
    FAIL();
  } catch (const ModelLoadError& e) {
    EXPECT_EQ(e.kind(), ModelLoadError::Kind::kVersionMismatch);
  }
}

TEST(Serialization, TruncatedFileIsMalformed) {
  const std::string path = temp_path("truncated.json");
  const std::string full = model_to_json(AisModel::random(Variant::kMerge, 10, 0.2, 5)).dump(1);
  {
    std::ofstream out(path);
    out << full.substr(0, full.size() / 2);
  }
  try {
    load_model(path);
    FAIL();
  } catch (const ModelLoadError& e) {
    EXPECT_EQ(e.kind(), ModelLoadError::Kind::kMalformed);
  }
  std::remove(path.c_str());
}

TEST(Serialization, MissingFileIsIoError) {
  EXPECT_THROW(load_model(temp_path("does_not_exist.json")), IoError);
}
