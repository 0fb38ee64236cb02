#pragma once

// Dataset generation, the surrogate distribution-matching loss, the training
// loop and prediction-error evaluation.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "aismerge/ais.hpp"
#include "aismerge/dataset.hpp"
#include "aismerge/human_driver.hpp"
#include "aismerge/nn.hpp"
#include "aismerge/random.hpp"
#include "aismerge/simulation.hpp"

namespace aismerge {

// ---------------------------------------------------------------------------
// Parallel helper

inline unsigned default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Calls body(i) for i in [0, n) on up to `jobs` threads. The first exception
/// (lowest index) is rethrown after all workers stop.
inline void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& body) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex mu;
  std::size_t err_index = n;
  std::exception_ptr err;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (i < err_index) {
          err_index = i;
          err = std::current_exception();
        }
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned k = 0; k < jobs; ++k) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Generation

struct GeneratedDataset {
  Dataset dataset;
  std::size_t unsafe = 0;
  std::size_t capped = 0;

  double unsafe_fraction() const {
    return dataset.empty() ? 0.0 : static_cast<double>(unsafe) / static_cast<double>(dataset.size());
  }
};

/// Simulates one data-collection episode. Safe mode pairs the gap-acceptance
/// controller with a sampled human driver; exploratory mode drives both
/// vehicles with independently sampled feature weights.
inline EpisodeLog generate_episode(GeneratorMode mode, std::uint64_t episode_seed,
                                   const ScenarioConfig& cfg, const StyleRange& range,
                                   double tau_safe = kDefaultTauSafe) {
  Rng rng(episode_seed);
  const IrlWeights hdv_w = sample_irl_weights(rng, range);
  const InitialConditions ic = sample_initial_conditions(rng);
  switch (mode) {
    case GeneratorMode::kSafe: {
      GapAcceptanceController c(cfg);
      return run_episode(c, hdv_w, ic, cfg, episode_seed, tau_safe);
    }
    case GeneratorMode::kExploratory: {
      IrlWeights cav_w = sample_irl_weights(rng, range);
      cav_w.v_des = std::min(cav_w.v_des, 1.5 * cfg.v_max);
      IrlController c(cav_w, cfg);
      return run_episode(c, hdv_w, ic, cfg, episode_seed, tau_safe);
    }
    case GeneratorMode::kExternal: break;
  }
  throw ConfigError("generate: mode must be safe or exploratory");
}

inline GeneratedDataset generate_dataset(GeneratorMode mode, std::size_t n_episodes,
                                         std::uint64_t seed, const ScenarioConfig& cfg,
                                         const StyleRange& range, unsigned jobs = 1,
                                         double tau_safe = kDefaultTauSafe) {
  if (n_episodes < 1) throw ConfigError("generate: n_episodes must be >= 1");
  if (mode == GeneratorMode::kExternal) throw ConfigError("generate: mode must be safe or exploratory");
  cfg.validate();
  range.validate();
  for (const Interval& i : {range.v_des}) {
    if (!(i.lo > 0 && i.hi <= 1.5 * cfg.v_max)) {
      throw ConfigError("style range: v_des must lie in (0, 1.5 v_max]");
    }
  }

  std::vector<Episode> episodes(n_episodes);
  std::vector<char> unsafe(n_episodes, 0);
  parallel_for(n_episodes, jobs, [&](std::size_t i) {
    const std::uint64_t es = derive_seed(seed, {i});
    const EpisodeLog log = generate_episode(mode, es, cfg, range, tau_safe);
    Episode ep = episode_from_log(log);
    ep.meta.id = std::to_string(i);
    ep.meta.mode = mode;
    unsafe[i] = log.safe ? 0 : 1;
    episodes[i] = std::move(ep);
  });

  GeneratedDataset out;
  out.dataset.episodes = std::move(episodes);
  for (std::size_t i = 0; i < n_episodes; ++i) {
    out.unsafe += static_cast<std::size_t>(unsafe[i]);
    out.capped += out.dataset.episodes[i].meta.hit_step_cap ? 1 : 0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss

/// (x - 2 x_ref)^T x, which equals ||x - x_ref||^2 - ||x_ref||^2.
inline double surrogate_loss(const Vec& pred_mean, const Vec& sample) {
  nn::require_width(sample, pred_mean.size(), "surrogate_loss");
  return (pred_mean - 2.0 * sample).dot(pred_mean);
}

inline Vec surrogate_loss_gradient(const Vec& pred_mean, const Vec& sample) {
  nn::require_width(sample, pred_mean.size(), "surrogate_loss_gradient");
  return 2.0 * (pred_mean - sample);
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int epochs = 100;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  int H = 10;
  // Encoder unroll window in steps; 0 unrolls whole episodes.
  int sequence_length = 0;
  double validation_fraction = 0.2;
  int batch_size = 8;  // episodes per optimizer step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Rescales the batch gradient to at most this 2-norm; 0 disables.
  double clip_norm = 0.0;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("train: learning rate must be > 0");
    if (H < 1) throw ConfigError("train: H must be >= 1");
    if (sequence_length < 0) throw ConfigError("train: sequence length must be >= 0");
    if (!(validation_fraction > 0 && validation_fraction < 1)) {
      throw ConfigError("train: validation fraction must lie in (0, 1)");
    }
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (!(clip_norm >= 0)) throw ConfigError("train: clip norm must be >= 0");
  }

  nn::AdamConfig adam() const { return {learning_rate, beta1, beta2, adam_eps}; }
};

struct EpochRecord {
  int epoch = 0;  // 0 is the initialization
  double train_loss = 0.0;       // mean surrogate loss per prediction
  double train_shifted = 0.0;    // mean squared prediction error per prediction
  double validation_loss = 0.0;
  double validation_shifted = 0.0;
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  std::size_t train_episodes = 0;
  std::size_t validation_episodes = 0;
  std::size_t skipped_episodes = 0;
  std::vector<std::string> warnings;

  double initial_validation_shifted() const { return epochs.front().validation_shifted; }
  double best_validation_shifted() const { return epochs.at(static_cast<std::size_t>(best_epoch)).validation_shifted; }
};

struct TrainResult {
  AisModel model;
  TrainingReport report;
};

/// Minimum episode length for a variant: the horizon plus two steps.
inline std::size_t min_episode_length(Variant v, int H) {
  return static_cast<std::size_t>((v == Variant::kNgsim ? 1 : H) + 2);
}

inline void require_schema(const Episode& ep, Variant v) {
  if (ep.schema != schema_of(v)) {
    throw ConfigError(std::string("variant mismatch: ") + to_string(v) + " model cannot use " +
                      (ep.schema == Schema::kMerge ? "merge" : "ramp") + "-schema episodes");
  }
}

namespace detail {

struct Moments {
  Vec sum, sq;
  double n = 0;
  void add(const Vec& x) {
    if (n == 0) {
      sum = Vec::Zero(x.size());
      sq = Vec::Zero(x.size());
    }
    sum += x;
    sq += x.cwiseProduct(x);
    n += 1;
  }
  Affine affine(Eigen::Index width) const {
    if (n == 0) return Affine::identity(width);
    Vec mean = sum / n;
    Vec var = (sq / n - mean.cwiseProduct(mean)).cwiseMax(0.0);
    Vec sd = var.cwiseSqrt().cwiseMax(1e-3);
    return {mean, sd};
  }
};

}  // namespace detail

/// Standardizes encoder inputs, decoder actions and decoder outputs with
/// statistics of the training episodes.
inline void fit_normalization(AisModel& m, const Dataset& train) {
  const Dimensions d = m.dims();
  detail::Moments in, act, out;
  for (const auto& ep : train.episodes) {
    if (ep.length() < min_episode_length(m.kind, m.H)) continue;
    const std::size_t last = ep.length() - 1 - static_cast<std::size_t>(m.kind == Variant::kNgsim ? 1 : m.H);
    for (std::size_t t = 0; t < ep.length(); ++t) {
      in.add(ep.observations[t].values);
      if (t <= last) {
        act.add(ep.decoder_action(t));
        out.add(ep.target(t, m.kind, m.H));
      }
    }
  }
  m.input_norm = in.affine(d.observation);
  m.action_norm = act.affine(d.actions);
  m.output_norm = out.affine(d.output);
  // Action slots of y share the decoder-action statistics.
  const auto slots = action_slots(m.kind);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    m.input_norm.offset[slots[i]] = m.action_norm.offset[static_cast<Eigen::Index>(i)];
    m.input_norm.scale[slots[i]] = m.action_norm.scale[static_cast<Eigen::Index>(i)];
  }
}

struct LossTotals {
  double loss = 0.0;
  double shifted = 0.0;
  std::size_t predictions = 0;
  double mean_loss() const { return predictions ? loss / static_cast<double>(predictions) : 0.0; }
  double mean_shifted() const { return predictions ? shifted / static_cast<double>(predictions) : 0.0; }
};

/// Unrolls the encoder over [begin, end) of an episode, decoding and scoring
/// at every step that has a full ground-truth horizon. The state entering
/// `begin` is zero.
inline AisGraph unroll(const AisModel& m, const Episode& ep, std::size_t begin, std::size_t end) {
  AisGraph g(m);
  const std::size_t ahead = static_cast<std::size_t>(m.kind == Variant::kNgsim ? 1 : m.H);
  for (std::size_t t = begin; t < end; ++t) {
    const Vec u_prev = ep.previous_action(t);
    if (ep.future(t) >= ahead) {
      const Vec u = ep.decoder_action(t);
      const Vec target = ep.target(t, m.kind, m.H);
      g.step(ep.observations[t], u_prev, &u, &target);
    } else {
      g.step(ep.observations[t], u_prev);
    }
  }
  return g;
}

inline std::vector<std::pair<std::size_t, std::size_t>> windows(const Episode& ep, int sequence_length) {
  std::vector<std::pair<std::size_t, std::size_t>> w;
  const std::size_t n = ep.length();
  if (sequence_length <= 0) {
    w.emplace_back(0, n);
    return w;
  }
  for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(sequence_length)) {
    w.emplace_back(b, std::min(n, b + static_cast<std::size_t>(sequence_length)));
  }
  return w;
}

inline LossTotals dataset_loss(const AisModel& m, const std::vector<const Episode*>& eps) {
  LossTotals tot;
  for (const Episode* ep : eps) {
    const AisGraph g = unroll(m, *ep, 0, ep->length());
    tot.loss += g.loss();
    tot.shifted += g.shifted_loss();
    tot.predictions += g.predictions();
  }
  return tot;
}

/// Trains encoder and decoder jointly with Adam on the surrogate loss and
/// returns the parameters with the lowest validation loss.
inline TrainResult train(const Dataset& dataset, Variant variant, const TrainConfig& cfg,
                         double dt = 0.2,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (dataset.empty()) throw TrainingError("train: empty dataset");
  for (const auto& ep : dataset.episodes) require_schema(ep, variant);

  TrainResult res;
  TrainingReport& rep = res.report;
  const std::size_t min_len = min_episode_length(variant, cfg.H);
  Dataset usable;
  for (const auto& ep : dataset.episodes) {
    if (ep.length() < min_len || !ep.consistent()) {
      ++rep.skipped_episodes;
      rep.warnings.push_back("skipped episode '" + ep.meta.id + "': " +
                             std::to_string(ep.length()) + " steps, need " + std::to_string(min_len));
    } else {
      usable.episodes.push_back(ep);
    }
  }
  if (usable.empty()) throw TrainingError("no trainable episodes");
  if (usable.size() < 2) throw TrainingError("train: need at least 2 trainable episodes to split");

  auto [tr, va] = split_dataset(usable, cfg.validation_fraction, cfg.seed);
  rep.train_episodes = tr.size();
  rep.validation_episodes = va.size();

  AisModel model = AisModel::random(variant, cfg.H, dt, derive_seed(cfg.seed, {0x1a17ULL}));
  fit_normalization(model, tr);

  std::vector<const Episode*> train_eps, val_eps;
  for (const auto& e : tr.episodes) train_eps.push_back(&e);
  for (const auto& e : va.episodes) val_eps.push_back(&e);

  auto record = [&](int epoch, const LossTotals& train_tot) {
    const LossTotals v = dataset_loss(model, val_eps);
    EpochRecord r{epoch, train_tot.mean_loss(), train_tot.mean_shifted(), v.mean_loss(),
                  v.mean_shifted()};
    rep.epochs.push_back(r);
    if (on_epoch) on_epoch(r);
    return r;
  };

  const EpochRecord init = record(0, dataset_loss(model, train_eps));
  AisModel best = model;
  double best_val = init.validation_loss;

  nn::ParamStore params = nn::params_of(model);
  AisModel grad = model.zeros_like();
  nn::ParamStore grads = nn::params_of(grad);
  nn::AdamState adam(cfg.adam());

  struct Item {
    const Episode* ep;
    std::size_t begin, end;
  };
  std::vector<Item> items;
  for (const Episode* ep : train_eps) {
    for (auto [b, e] : windows(*ep, cfg.sequence_length)) items.push_back({ep, b, e});
  }
  Rng shuffle_rng(derive_seed(cfg.seed, {0x5f1eULL}));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[static_cast<std::size_t>(shuffle_rng() % i)]);
    }
    LossTotals tot;
    for (std::size_t b = 0; b < items.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(items.size(), b + static_cast<std::size_t>(cfg.batch_size));
      grad.for_each_param([](const std::string&, auto& a) { a.setZero(); });
      std::size_t preds = 0;
      for (std::size_t k = b; k < e; ++k) {
        const AisGraph g = unroll(model, *items[k].ep, items[k].begin, items[k].end);
        if (g.predictions() == 0) continue;
        g.backward(grad);
        preds += g.predictions();
        tot.loss += g.loss();
        tot.shifted += g.shifted_loss();
        tot.predictions += g.predictions();
      }
      if (preds == 0) continue;
      const double inv = 1.0 / static_cast<double>(preds);
      double norm2 = 0.0;
      grad.for_each_param([&](const std::string&, auto& a) {
        a *= inv;
        norm2 += a.squaredNorm();
      });
      if (cfg.clip_norm > 0 && norm2 > cfg.clip_norm * cfg.clip_norm) {
        const double s = cfg.clip_norm / std::sqrt(norm2);
        grad.for_each_param([&](const std::string&, auto& a) { a *= s; });
      }
      if (!std::isfinite(norm2)) throw TrainingError("train: non-finite gradient");
      nn::adam_step(params, grads, adam);
    }
    const EpochRecord r = record(epoch, tot);
    if (r.validation_loss < best_val) {
      best_val = r.validation_loss;
      best = model;
      rep.best_epoch = epoch;
    }
  }
  res.model = std::move(best);
  return res;
}

// ---------------------------------------------------------------------------
// Prediction error

struct RmseReport {
  // Merge variants: HDV positions and speeds over the horizon. Ramp variant:
  // longitudinal positions in `position`, lateral in `lateral`.
  double position = 0.0;
  double speed = 0.0;
  double lateral = 0.0;
  std::vector<double> position_per_step;
  std::vector<double> speed_per_step;
  std::size_t predictions = 0;
  std::size_t episodes = 0;
};

/// Replays each episode through the encoder and compares every decoded
/// horizon with the realized future.
template <Predictor P>
RmseReport evaluate_rmse(const P& model, const Dataset& data) {
  const Variant v = model.variant();
  const int H = model.horizon();
  const int ahead = v == Variant::kNgsim ? 1 : H;
  RmseReport rep;
  std::vector<double> pos_sq(static_cast<std::size_t>(ahead), 0.0);
  std::vector<double> spd_sq(static_cast<std::size_t>(ahead), 0.0);
  double lat_sq = 0.0;
  for (const auto& ep : data.episodes) {
    require_schema(ep, v);
    if (ep.length() < min_episode_length(v, H)) continue;
    ++rep.episodes;
    auto s = model.init_state();
    for (std::size_t t = 0; t < ep.length(); ++t) {
      s = model.encode(s, ep.observations[t], ep.previous_action(t));
      if (ep.future(t) < static_cast<std::size_t>(ahead)) continue;
      const HorizonPrediction p = model.decode(s, ep.decoder_action(t));
      ++rep.predictions;
      if (v == Variant::kNgsim) {
        const Observation& y = ep.observations[t + 1];
        const double dz = p.z_hat[0] - y[ngsim_obs::kRampLon];
        const double dl = p.lateral[0] - y[ngsim_obs::kRampLat];
        pos_sq[0] += dz * dz;
        lat_sq += dl * dl;
        continue;
      }
      for (int k = 1; k <= H; ++k) {
        const Observation& y = ep.observations[t + static_cast<std::size_t>(k)];
        const double dz = p.z_hat[k - 1] - y[merge_obs::kZ2];
        const double dv = p.v_hat[k - 1] - y[merge_obs::kV2];
        pos_sq[static_cast<std::size_t>(k - 1)] += dz * dz;
        spd_sq[static_cast<std::size_t>(k - 1)] += dv * dv;
      }
    }
  }
  if (rep.predictions == 0) throw InvalidInputError("evaluate_rmse: no episode has H + 2 steps");
  const double n = static_cast<double>(rep.predictions);
  double pos_total = 0.0, spd_total = 0.0;
  for (int k = 0; k < ahead; ++k) {
    rep.position_per_step.push_back(std::sqrt(pos_sq[static_cast<std::size_t>(k)] / n));
    pos_total += pos_sq[static_cast<std::size_t>(k)];
    if (v != Variant::kNgsim) {
      rep.speed_per_step.push_back(std::sqrt(spd_sq[static_cast<std::size_t>(k)] / n));
      spd_total += spd_sq[static_cast<std::size_t>(k)];
    }
  }
  rep.position = std::sqrt(pos_total / (n * ahead));
  rep.speed = v == Variant::kNgsim ? 0.0 : std::sqrt(spd_total / (n * ahead));
  rep.lateral = std::sqrt(lat_sq / n);
  return rep;
}

}  // namespace aismerge
