#pragma once

// Episodes, datasets and the trajectory CSV format.
//
// Merge schema (one row per time step):
//   episode_id,t,z1,v1,u1,z2,v2,u2
// Ramp schema:
//   episode_id,t,z_ramp_lat,z_ramp_lon,v_ramp,a_ramp,z_lead,v_lead,a_lead,z_lag,v_lag,a_lag
//
// The action columns hold the acceleration applied at that row's time; the
// last row of an episode carries no applied action and its action fields are
// ignored on load (written as 0). Leading lines starting with '#' form a
// metadata block and are skipped by the reader.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <unordered_map>
#include <utility>
#include <vector>

#include "aismerge/ais.hpp"
#include "aismerge/errors.hpp"
#include "aismerge/human_driver.hpp"
#include "aismerge/random.hpp"

namespace aismerge {

enum class GeneratorMode { kSafe, kExploratory, kExternal };

inline std::string to_string(GeneratorMode m) {
  switch (m) {
    case GeneratorMode::kSafe: return "safe";
    case GeneratorMode::kExploratory: return "exploratory";
    case GeneratorMode::kExternal: return "external";
  }
  return "?";
}

inline GeneratorMode generator_mode_from_string(const std::string& s) {
  if (s == "safe") return GeneratorMode::kSafe;
  if (s == "exploratory") return GeneratorMode::kExploratory;
  if (s == "external") return GeneratorMode::kExternal;
  throw ConfigError("unknown generator mode '" + s + "'");
}

enum class Schema { kMerge, kNgsim };

inline Schema schema_of(Variant v) { return is_merge(v) ? Schema::kMerge : Schema::kNgsim; }

struct EpisodeMeta {
  std::string id;
  std::uint64_t seed = 0;
  GeneratorMode mode = GeneratorMode::kExternal;
  std::optional<IrlWeights> hdv_weights;
  std::optional<IrlWeights> cav_weights;
  bool hit_step_cap = false;
};

/// n observations and n-1 actions per vehicle.
struct Episode {
  Schema schema = Schema::kMerge;
  double dt = 0.2;
  std::vector<Observation> observations;
  std::vector<double> cav_actions;   // merge only
  std::vector<double> hdv_actions;   // merge: human driver; ramp schema: ramp vehicle
  std::vector<double> lead_actions;  // ramp schema only
  std::vector<double> lag_actions;   // ramp schema only
  EpisodeMeta meta;

  std::size_t length() const { return observations.size(); }

  bool consistent() const {
    const std::size_t n = observations.size();
    if (n == 0 || !(dt > 0)) return false;
    const Eigen::Index width = schema == Schema::kMerge ? merge_obs::kWidth : ngsim_obs::kWidth;
    for (const auto& y : observations) {
      if (y.width() != width || !y.values.allFinite()) return false;
    }
    if (hdv_actions.size() != n - 1) return false;
    if (schema == Schema::kMerge) return cav_actions.size() == n - 1;
    return lead_actions.size() == n - 1 && lag_actions.size() == n - 1;
  }

  /// Actions fed to the encoder at step t (the previous step's actions).
  Vec previous_action(std::size_t t) const {
    const Observation& y = observations.at(t);
    if (schema == Schema::kMerge) return Vec::Constant(1, y[merge_obs::kU1Prev]);
    Vec u(3);
    u << y[ngsim_obs::kRampA], y[ngsim_obs::kLeadA], y[ngsim_obs::kLagA];
    return u;
  }

  /// Actions fed to the decoder at step t (the actions applied at t).
  Vec decoder_action(std::size_t t) const {
    if (schema == Schema::kMerge) return Vec::Constant(1, cav_actions.at(t));
    Vec u(3);
    u << hdv_actions.at(t), lead_actions.at(t), lag_actions.at(t);
    return u;
  }

  /// Number of look-ahead steps available after t.
  std::size_t future(std::size_t t) const { return length() - 1 - t; }

  /// Ground-truth decoder target at step t laid out like AisModel::decode_raw.
  Vec target(std::size_t t, Variant v, int H) const {
    switch (v) {
      case Variant::kMerge: {
        Vec out(2 * H);
        for (int k = 1; k <= H; ++k) {
          const Observation& y = observations.at(t + static_cast<std::size_t>(k));
          out[k - 1] = y[merge_obs::kZ2];
          out[H + k - 1] = y[merge_obs::kV2];
        }
        return out;
      }
      case Variant::kMergePositions: {
        Vec out(H);
        for (int k = 1; k <= H; ++k) {
          out[k - 1] = observations.at(t + static_cast<std::size_t>(k))[merge_obs::kZ2];
        }
        return out;
      }
      case Variant::kNgsim: {
        const Observation& y = observations.at(t + 1);
        Vec out(2);
        out << y[ngsim_obs::kRampLat], y[ngsim_obs::kRampLon];
        return out;
      }
    }
    throw ConfigError("unknown variant");
  }
};

enum class Split { kTrain, kValidation, kAll };

struct Dataset {
  std::vector<Episode> episodes;
  Split split = Split::kAll;

  std::size_t size() const { return episodes.size(); }
  bool empty() const { return episodes.empty(); }
};

/// Seeded by-episode split; the validation share is rounded and kept >= 1
/// (and < n) whenever n >= 2.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& all, double validation_fraction,
                                                 std::uint64_t seed) {
  if (!(validation_fraction > 0 && validation_fraction < 1)) {
    throw ConfigError("validation fraction must lie in (0, 1)");
  }
  const std::size_t n = all.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, {0x5b1e7ULL}));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(n)));
  if (n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  else n_val = 0;
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  Dataset tr, va;
  tr.split = Split::kTrain;
  va.split = Split::kValidation;
  for (auto i : train) tr.episodes.push_back(all.episodes[i]);
  for (auto i : val) va.episodes.push_back(all.episodes[i]);
  return {std::move(tr), std::move(va)};
}

// ---------------------------------------------------------------------------
// CSV

inline const std::vector<std::string>& merge_columns() {
  static const std::vector<std::string> c{"episode_id", "t", "z1", "v1", "u1", "z2", "v2", "u2"};
  return c;
}

inline const std::vector<std::string>& ngsim_columns() {
  static const std::vector<std::string> c{"episode_id", "t",      "z_ramp_lat", "z_ramp_lon",
                                          "v_ramp",     "a_ramp", "z_lead",     "v_lead",
                                          "a_lead",     "z_lag",  "v_lag",      "a_lag"};
  return c;
}

/// Shortest round-trip decimal form.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

using Metadata = std::vector<std::pair<std::string, std::string>>;

inline void write_metadata(std::ostream& out, const Metadata& meta) {
  for (const auto& [k, v] : meta) out << "# " << k << '=' << v << '\n';
}

inline void write_trajectory_csv(std::ostream& out, const Dataset& ds, const Metadata& meta = {}) {
  write_metadata(out, meta);
  if (ds.empty()) throw InvalidInputError("write_trajectory_csv: empty dataset");
  const Schema schema = ds.episodes.front().schema;
  const auto& cols = schema == Schema::kMerge ? merge_columns() : ngsim_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (std::size_t e = 0; e < ds.size(); ++e) {
    const Episode& ep = ds.episodes[e];
    if (ep.schema != schema) throw InvalidInputError("write_trajectory_csv: mixed schemas");
    const std::string id = ep.meta.id.empty() ? std::to_string(e) : ep.meta.id;
    const std::size_t n = ep.length();
    for (std::size_t t = 0; t < n; ++t) {
      const Observation& y = ep.observations[t];
      const bool last = t + 1 == n;
      out << id << ',' << format_double(static_cast<double>(t) * ep.dt);
      auto put = [&](double x) { out << ',' << format_double(x); };
      if (schema == Schema::kMerge) {
        put(y[merge_obs::kZ1]);
        put(y[merge_obs::kV1]);
        put(last ? 0.0 : ep.cav_actions[t]);
        put(y[merge_obs::kZ2]);
        put(y[merge_obs::kV2]);
        put(last ? 0.0 : ep.hdv_actions[t]);
      } else {
        // The ramp vehicle's speed is not part of the observation vector; it
        // is reconstructed from consecutive longitudinal positions.
        const double v_ramp =
            last ? (t > 0 ? (y[ngsim_obs::kRampLon] - ep.observations[t - 1][ngsim_obs::kRampLon]) / ep.dt
                          : 0.0)
                 : (ep.observations[t + 1][ngsim_obs::kRampLon] - y[ngsim_obs::kRampLon]) / ep.dt;
        put(y[ngsim_obs::kRampLat]);
        put(y[ngsim_obs::kRampLon]);
        put(v_ramp);
        put(last ? 0.0 : ep.hdv_actions[t]);
        put(y[ngsim_obs::kLeadZ]);
        put(y[ngsim_obs::kLeadV]);
        put(last ? 0.0 : ep.lead_actions[t]);
        put(y[ngsim_obs::kLagZ]);
        put(y[ngsim_obs::kLagV]);
        put(last ? 0.0 : ep.lag_actions[t]);
      }
      out << '\n';
    }
  }
}

inline void write_trajectory_csv(const std::string& path, const Dataset& ds,
                                 const Metadata& meta = {}) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  write_trajectory_csv(out, ds, meta);
  if (!out) throw IoError(path, "write failed");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline double parse_field(const std::string& raw, std::size_t line, const std::string& column) {
  const std::string s = trim(raw);
  double x = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto res = std::from_chars(first, last, x);
  if (s.empty() || res.ec != std::errc() || res.ptr != last) {
    throw ParseError("line " + std::to_string(line) + ", column " + column + ": cannot parse '" +
                     s + "' as a number");
  }
  if (!std::isfinite(x)) {
    throw ParseError("line " + std::to_string(line) + ", column " + column + ": non-finite value");
  }
  return x;
}

}  // namespace detail

inline constexpr double kTimingTolerance = 1e-6;

/// Reads either schema (detected from the header). Episodes appear in order
/// of first occurrence, rows are sorted by t within each episode, and every
/// episode must share one uniform sampling interval.
inline Dataset read_trajectory_csv(std::istream& in, std::optional<Schema> expected = std::nullopt) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    header = detail::split_csv_line(line);
    for (auto& h : header) h = detail::trim(h);
    break;
  }
  if (header.empty()) throw SchemaError("", "trajectory file has no header row");

  auto has = [&](const std::string& c) {
    return std::find(header.begin(), header.end(), c) != header.end();
  };
  Schema schema = Schema::kMerge;
  if (expected) {
    schema = *expected;
  } else {
    for (const auto& c : ngsim_columns()) {
      if (c != "episode_id" && c != "t" && has(c)) schema = Schema::kNgsim;
    }
  }
  const auto& cols = schema == Schema::kMerge ? merge_columns() : ngsim_columns();
  std::vector<std::size_t> pos;
  for (const auto& c : cols) {
    const auto it = std::find(header.begin(), header.end(), c);
    if (it == header.end()) throw SchemaError(c, "missing column '" + c + "'");
    pos.push_back(static_cast<std::size_t>(it - header.begin()));
  }

  struct Row {
    std::size_t line;
    std::vector<double> v;  // in `cols` order, excluding episode_id
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<Row>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty() || line[0] == '#') continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    const std::string id = detail::trim(fields[pos[0]]);
    Row r{line_no, {}};
    for (std::size_t c = 1; c < cols.size(); ++c) {
      r.v.push_back(detail::parse_field(fields[pos[c]], line_no, cols[c]));
    }
    auto [it, inserted] = rows.try_emplace(id);
    if (inserted) order.push_back(id);
    it->second.push_back(std::move(r));
  }

  Dataset ds;
  std::optional<double> dt;
  for (const auto& id : order) {
    auto& ep_rows = rows[id];
    std::stable_sort(ep_rows.begin(), ep_rows.end(),
                     [](const Row& a, const Row& b) { return a.v[0] < b.v[0]; });
    for (std::size_t i = 1; i < ep_rows.size(); ++i) {
      const double gap = ep_rows[i].v[0] - ep_rows[i - 1].v[0];
      if (!dt) {
        if (!(gap > kTimingTolerance)) {
          throw TimingError(ep_rows[i].line, "line " + std::to_string(ep_rows[i].line) +
                                                 ": non-increasing timestamp");
        }
        dt = gap;
      } else if (std::abs(gap - *dt) > kTimingTolerance) {
        throw TimingError(ep_rows[i].line, "line " + std::to_string(ep_rows[i].line) +
                                               ": time step " + format_double(gap) +
                                               " differs from dt " + format_double(*dt));
      }
    }
    Episode ep;
    ep.schema = schema;
    ep.meta.id = id;
    const std::size_t n = ep_rows.size();
    for (std::size_t t = 0; t < n; ++t) {
      const auto& v = ep_rows[t].v;  // v[0] is t
      const auto* prev = t > 0 ? &ep_rows[t - 1].v : nullptr;
      auto prev_at = [&](std::size_t col) { return prev ? (*prev)[col] : 0.0; };
      if (schema == Schema::kMerge) {
        // columns: t z1 v1 u1 z2 v2 u2
        ep.observations.push_back(Observation::merge(v[1], v[2], prev_at(3), v[4], v[5], prev_at(6)));
        if (t + 1 < n) {
          ep.cav_actions.push_back(v[3]);
          ep.hdv_actions.push_back(v[6]);
        }
      } else {
        // columns: t lat lon v_ramp a_ramp z_lead v_lead a_lead z_lag v_lag a_lag
        Observation y;
        y.values.resize(ngsim_obs::kWidth);
        y.values << v[1], v[2], prev_at(4), v[5], v[6], prev_at(7), v[8], v[9], prev_at(10);
        ep.observations.push_back(std::move(y));
        if (t + 1 < n) {
          ep.hdv_actions.push_back(v[4]);
          ep.lead_actions.push_back(v[7]);
          ep.lag_actions.push_back(v[10]);
        }
      }
    }
    ds.episodes.push_back(std::move(ep));
  }
  const double common_dt = dt.value_or(0.2);
  for (auto& ep : ds.episodes) ep.dt = common_dt;
  return ds;
}

inline Dataset load_trajectory_csv(const std::string& path,
                                   std::optional<Schema> expected = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open trajectory file");
  return read_trajectory_csv(in, expected);
}

}  // namespace aismerge
