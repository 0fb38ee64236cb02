#pragma once

// Ground-truth predictor for tests and tool self-checks. It identifies the
// episode being replayed by matching the observation history against a
// dataset and returns that episode's realized future.

#include <cstddef>
#include <vector>

#include "aismerge/ais.hpp"
#include "aismerge/dataset.hpp"

namespace aismerge {

class OracleModel {
 public:
  struct State {
    std::vector<std::size_t> candidates;  // episodes consistent with the history
    std::size_t t = 0;                    // index of the latest observation
    bool started = false;
  };

  OracleModel(const Dataset& data, Variant variant, int H)
      : data_(&data), variant_(variant), H_(variant == Variant::kNgsim ? 1 : H) {}

  Variant variant() const { return variant_; }
  int horizon() const { return H_; }
  State init_state() const { return {}; }

  State encode(const State& prev, const Observation& y, const Vec&) const {
    State s;
    if (!prev.started) {
      s.t = 0;
      for (std::size_t i = 0; i < data_->size(); ++i) {
        const auto& ep = data_->episodes[i];
        if (!ep.observations.empty() && ep.observations[0] == y) s.candidates.push_back(i);
      }
    } else {
      s.t = prev.t + 1;
      for (std::size_t i : prev.candidates) {
        const auto& ep = data_->episodes[i];
        if (s.t < ep.length() && ep.observations[s.t] == y) s.candidates.push_back(i);
      }
    }
    s.started = true;
    return s;
  }

  /// Realized future of the first matching episode, held at its last sample
  /// beyond the end. All zeros if nothing matches.
  HorizonPrediction decode(const State& s, const Vec&) const {
    HorizonPrediction p;
    if (variant_ == Variant::kNgsim) {
      p.z_hat = Vec::Zero(1);
      p.lateral = Vec::Zero(1);
      if (!s.candidates.empty()) {
        const auto& ep = data_->episodes[s.candidates.front()];
        const auto& y = ep.observations[std::min(s.t + 1, ep.length() - 1)];
        p.z_hat[0] = y[ngsim_obs::kRampLon];
        p.lateral[0] = y[ngsim_obs::kRampLat];
      }
      return p;
    }
    p.z_hat = Vec::Zero(H_);
    p.v_hat = Vec::Zero(H_);
    if (s.candidates.empty()) return p;
    const auto& ep = data_->episodes[s.candidates.front()];
    for (int k = 1; k <= H_; ++k) {
      const auto& y = ep.observations[std::min(s.t + static_cast<std::size_t>(k), ep.length() - 1)];
      p.z_hat[k - 1] = y[merge_obs::kZ2];
      p.v_hat[k - 1] = y[merge_obs::kV2];
    }
    return p;
  }

 private:
  const Dataset* data_;
  Variant variant_;
  int H_;
};

static_assert(Predictor<OracleModel>);

}  // namespace aismerge
