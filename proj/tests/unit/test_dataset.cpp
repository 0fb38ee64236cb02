#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "aismerge/dataset.hpp"

using namespace aismerge;

namespace {

const char* kNgsimHeader =
    "episode_id,t,z_ramp_lat,z_ramp_lon,v_ramp,a_ramp,z_lead,v_lead,a_lead,z_lag,v_lag,a_lag\n";

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return read_trajectory_csv(in);
}

Episode merge_episode(int n, double offset) {
  Episode ep;
  ep.schema = Schema::kMerge;
  ep.dt = 0.2;
  ep.meta.id = "ep" + std::to_string(static_cast<int>(offset));
  double u1p = 0, u2p = 0;
  for (int t = 0; t < n; ++t) {
    const double u1 = 0.1 * t - 1.0 + offset, u2 = 0.3 - 0.05 * t;
    ep.observations.push_back(Observation::merge(offset + 2.0 * t, 10.0 + 0.1 * t, u1p, -3.0 + 1.9 * t,
                                                 9.0 + 0.01 * t, u2p));
    if (t + 1 < n) {
      ep.cav_actions.push_back(u1);
      ep.hdv_actions.push_back(u2);
    }
    u1p = u1;
    u2p = u2;
  }
  return ep;
}

}  // namespace

TEST(TrajectoryCsv, ThreeRowNgsimFile) {
  const Dataset ds = parse(std::string(kNgsimHeader) +
                           "a,0.0,1.5,10,8,0.5,30,9,0,-5,10,0.1\n"
                           "a,0.1,1.4,10.8,8.05,0.4,30.9,9,0,-4,10.01,0.2\n"
                           "a,0.2,1.3,11.6,8.09,0.3,31.8,9,0,-3,10.03,0.0\n");
  ASSERT_EQ(ds.size(), 1u);
  const Episode& ep = ds.episodes[0];
  EXPECT_EQ(ep.schema, Schema::kNgsim);
  EXPECT_EQ(ep.length(), 3u);
  EXPECT_EQ(ep.hdv_actions.size(), 2u);
  EXPECT_EQ(ep.lead_actions.size(), 2u);
  EXPECT_EQ(ep.lag_actions.size(), 2u);
  EXPECT_NEAR(ep.dt, 0.1, 1e-12);
  EXPECT_TRUE(ep.consistent());
  EXPECT_DOUBLE_EQ(ep.observations[1][ngsim_obs::kRampA], 0.5);
  EXPECT_DOUBLE_EQ(ep.observations[0][ngsim_obs::kRampA], 0.0);
  EXPECT_DOUBLE_EQ(ep.lag_actions[1], 0.2);
}

TEST(TrajectoryCsv, MissingColumnNamesIt) {
  try {
    parse("episode_id,t,z_ramp_lat,z_ramp_lon,a_ramp,z_lead,v_lead,a_lead,z_lag,v_lag,a_lag\n"
          "a,0,1,2,3,4,5,6,7,8,9\n");
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.column(), "v_ramp");
    EXPECT_NE(std::string(e.what()).find("v_ramp"), std::string::npos);
  }
}

TEST(TrajectoryCsv, InterleavedEpisodesAreSplitAndSorted) {
  const Dataset ds = parse(
      "# generated by hand\n"
      "episode_id,t,z1,v1,u1,z2,v2,u2\n"
      "b,0.4,3,10,0,0,9,0\n"
      "a,0.2,1,10,0.5,2,9,0\n"
      "b,0.0,1,10,1,0,9,0\n"
      "a,0.0,0,10,0.25,1,9,0\n"
      "b,0.2,2,10,-1,0,9,0\n");
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.episodes[0].meta.id, "b");
  EXPECT_EQ(ds.episodes[1].meta.id, "a");
  const Episode& b = ds.episodes[0];
  ASSERT_EQ(b.length(), 3u);
  EXPECT_DOUBLE_EQ(b.observations[0][merge_obs::kZ1], 1);
  EXPECT_DOUBLE_EQ(b.observations[2][merge_obs::kZ1], 3);
  EXPECT_DOUBLE_EQ(b.cav_actions[0], 1);
  EXPECT_DOUBLE_EQ(b.cav_actions[1], -1);
  EXPECT_DOUBLE_EQ(b.observations[2][merge_obs::kU1Prev], -1);
  EXPECT_EQ(ds.episodes[1].length(), 2u);
  EXPECT_DOUBLE_EQ(ds.episodes[1].cav_actions[0], 0.25);
}

TEST(TrajectoryCsv, NonUniformTimestampReportsRow) {
  try {
    parse("episode_id,t,z1,v1,u1,z2,v2,u2\n"
          "a,0.0,0,10,0,0,9,0\n"
          "a,0.2,2,10,0,2,9,0\n"
          "a,0.45,4,10,0,4,9,0\n");
    FAIL();
  } catch (const TimingError& e) {
    EXPECT_EQ(e.row(), 4u);
  }
}

TEST(TrajectoryCsv, TimingToleranceAcceptsRoundingNoise) {
  const Dataset ds = parse("episode_id,t,z1,v1,u1,z2,v2,u2\n"
                           "a,0.0,0,10,0,0,9,0\n"
                           "a,0.2000004,2,10,0,2,9,0\n"
                           "a,0.4,4,10,0,4,9,0\n");
  EXPECT_EQ(ds.episodes[0].length(), 3u);
}

TEST(TrajectoryCsv, NonFiniteFieldIsParseError) {
  try {
    parse("episode_id,t,z1,v1,u1,z2,v2,u2\n"
          "a,0.0,0,10,0,0,9,0\n"
          "a,0.2,nan,10,0,2,9,0\n");
    FAIL();
  } catch (const ParseError& e) {
    const std::string w = e.what();
    EXPECT_NE(w.find("line 3"), std::string::npos) << w;
    EXPECT_NE(w.find("z1"), std::string::npos) << w;
  }
  EXPECT_THROW(parse("episode_id,t,z1,v1,u1,z2,v2,u2\na,0,x,1,1,1,1,1\n"), ParseError);
  EXPECT_THROW(parse("episode_id,t,z1,v1,u1,z2,v2,u2\na,0,1,1,1,1,1\n"), ParseError);
}

TEST(TrajectoryCsv, EmptyFileIsSchemaError) { EXPECT_THROW(parse("# only comments\n"), SchemaError); }

TEST(TrajectoryCsv, MergeRoundTripIsExact) {
  Dataset ds;
  ds.episodes = {merge_episode(6, 0), merge_episode(4, 1.0 / 3.0)};
  ds.episodes[1].meta.id = "second";
  std::stringstream buf;
  write_trajectory_csv(buf, ds, {{"seed", "7"}});
  EXPECT_EQ(buf.str().rfind("# seed=7\n", 0), 0u);
  const Dataset back = read_trajectory_csv(buf, Schema::kMerge);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t e = 0; e < 2; ++e) {
    const Episode& a = ds.episodes[e];
    const Episode& b = back.episodes[e];
    EXPECT_EQ(b.meta.id, a.meta.id);
    ASSERT_EQ(b.length(), a.length());
    for (std::size_t t = 0; t < a.length(); ++t) EXPECT_EQ(b.observations[t], a.observations[t]) << t;
    EXPECT_EQ(b.cav_actions, a.cav_actions);
    EXPECT_EQ(b.hdv_actions, a.hdv_actions);
    EXPECT_NEAR(b.dt, a.dt, 1e-12);
  }
}

TEST(TrajectoryCsv, NgsimRoundTripKeepsObservations) {
  const Dataset ds = parse(std::string(kNgsimHeader) +
                           "a,0.0,1.5,10,8,0.5,30,9,0.25,-5,10,0.1\n"
                           "a,0.1,1.4,10.8,8.05,0.4,30.9,9,0,-4,10.01,0.2\n"
                           "a,0.2,1.3,11.6,8.09,0.3,31.8,9,0,-3,10.03,0.0\n");
  std::stringstream buf;
  write_trajectory_csv(buf, ds);
  const Dataset back = read_trajectory_csv(buf);
  ASSERT_EQ(back.size(), 1u);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(back.episodes[0].observations[t], ds.episodes[0].observations[t]);
  EXPECT_EQ(back.episodes[0].lead_actions, ds.episodes[0].lead_actions);
}

TEST(Episode, TargetsAndActions) {
  const Episode ep = merge_episode(6, 0);
  const Vec tgt = ep.target(1, Variant::kMerge, 3);
  ASSERT_EQ(tgt.size(), 6);
  EXPECT_DOUBLE_EQ(tgt[0], ep.observations[2][merge_obs::kZ2]);
  EXPECT_DOUBLE_EQ(tgt[2], ep.observations[4][merge_obs::kZ2]);
  EXPECT_DOUBLE_EQ(tgt[3], ep.observations[2][merge_obs::kV2]);
  EXPECT_EQ(ep.target(0, Variant::kMergePositions, 2).size(), 2);
  EXPECT_EQ(ep.previous_action(3)[0], ep.cav_actions[2]);
  EXPECT_EQ(ep.decoder_action(3)[0], ep.cav_actions[3]);
  EXPECT_EQ(ep.future(2), 3u);
}

TEST(Episode, ConsistencyChecksLengths) {
  Episode ep = merge_episode(5, 0);
  EXPECT_TRUE(ep.consistent());
  ep.cav_actions.pop_back();
  EXPECT_FALSE(ep.consistent());
  ep = merge_episode(5, 0);
  ep.dt = 0;
  EXPECT_FALSE(ep.consistent());
}

TEST(Split, PartitionIsDeterministicAndComplete) {
  Dataset ds;
  for (int i = 0; i < 25; ++i) ds.episodes.push_back(merge_episode(3, i));
  const auto [tr, va] = split_dataset(ds, 0.2, 3);
  EXPECT_EQ(va.size(), 5u);
  EXPECT_EQ(tr.size(), 20u);
  EXPECT_EQ(tr.split, Split::kTrain);
  EXPECT_EQ(va.split, Split::kValidation);
  std::set<std::string> ids;
  for (const auto& e : tr.episodes) ids.insert(e.meta.id);
  for (const auto& e : va.episodes) ids.insert(e.meta.id);
  EXPECT_EQ(ids.size(), 25u);
  const auto again = split_dataset(ds, 0.2, 3);
  for (std::size_t i = 0; i < va.size(); ++i) EXPECT_EQ(again.second.episodes[i].meta.id, va.episodes[i].meta.id);
  EXPECT_THROW(split_dataset(ds, 0.0, 1), ConfigError);
  EXPECT_THROW(split_dataset(ds, 1.0, 1), ConfigError);
}

TEST(Split, KeepsAtLeastOneValidationEpisode) {
  Dataset ds;
  for (int i = 0; i < 3; ++i) ds.episodes.push_back(merge_episode(3, i));
  const auto [tr, va] = split_dataset(ds, 0.01, 1);
  EXPECT_EQ(va.size(), 1u);
  EXPECT_EQ(tr.size(), 2u);
}

TEST(GeneratorMode, StringRoundTrip) {
  for (auto m : {GeneratorMode::kSafe, GeneratorMode::kExploratory, GeneratorMode::kExternal}) {
    EXPECT_EQ(generator_mode_from_string(to_string(m)), m);
  }
  EXPECT_THROW(generator_mode_from_string("reckless"), ConfigError);
}
