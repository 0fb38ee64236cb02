#pragma once

// Approximate-information-state predictor.
//
// The encoder folds each new observation into a fixed-width recurrent state
//   s_t = encode(s_{t-1}, y_t, u_{t-1})      (dense-ReLU-dense-ReLU-GRU)
// and the decoder maps (s_t, u_t) to the mean of a unit-variance normal over
// the human driver's next H states                (dense-ReLU-dense-ReLU-dense)
//
// Two architectures are supported: the two-vehicle merge model (6 inputs,
// 4 hidden) and the three-vehicle highway-ramp model (9 inputs, 24 hidden,
// one-step lateral/longitudinal output). Inputs and outputs go through fixed
// affine normalizers fitted on training data; they are stored with the model
// and are not trained.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <concepts>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "aismerge/errors.hpp"
#include "aismerge/nn.hpp"
#include "aismerge/random.hpp"

namespace aismerge {

using nn::Mat;
using nn::Vec;

enum class Variant {
  kMerge,           // decoder emits H positions then H speeds
  kMergePositions,  // decoder emits H positions; speeds by finite differences
  kNgsim,           // three-vehicle ramp model, one-step (lateral, longitudinal)
};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kMerge: return "merge";
    case Variant::kMergePositions: return "merge-positions";
    case Variant::kNgsim: return "ngsim";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "merge") return Variant::kMerge;
  if (s == "merge-positions") return Variant::kMergePositions;
  if (s == "ngsim") return Variant::kNgsim;
  throw ConfigError("unknown model variant '" + s + "'");
}

inline bool is_merge(Variant v) { return v != Variant::kNgsim; }

// Observation slots.
namespace merge_obs {
inline constexpr int kZ1 = 0, kV1 = 1, kU1Prev = 2, kZ2 = 3, kV2 = 4, kU2Prev = 5, kWidth = 6;
}
namespace ngsim_obs {
// ramp lateral, ramp longitudinal, ramp action, lead (z, v, a), lag (z, v, a)
inline constexpr int kRampLat = 0, kRampLon = 1, kRampA = 2, kLeadZ = 3, kLeadV = 4, kLeadA = 5,
                     kLagZ = 6, kLagV = 7, kLagA = 8, kWidth = 9;
}

/// Joint observation at one time step. Action slots hold the previous step's
/// accelerations.
struct Observation {
  Vec values;

  static Observation merge(double z1, double v1, double u1_prev, double z2, double v2,
                           double u2_prev) {
    Observation y;
    y.values.resize(merge_obs::kWidth);
    y.values << z1, v1, u1_prev, z2, v2, u2_prev;
    return y;
  }

  Eigen::Index width() const { return values.size(); }
  double operator[](Eigen::Index i) const { return values[i]; }
  bool operator==(const Observation& o) const {
    return values.size() == o.values.size() && values == o.values;
  }
};

struct AisState {
  Vec s;
  bool operator==(const AisState& o) const { return s.size() == o.s.size() && s == o.s; }
};

/// Mean of the predicted distribution. Merge variants fill z_hat/v_hat with
/// H entries each; the ramp variant fills z_hat (longitudinal) and lateral
/// with one entry each.
struct HorizonPrediction {
  Vec z_hat;
  Vec v_hat;
  Vec lateral;
};

struct Dimensions {
  int observation;
  int actions;  // action slots in y, and decoder action input width
  int enc1;
  int enc2;
  int hidden;
  int dec1;
  int dec2;
  int output;
};

inline Dimensions dimensions(Variant v, int H) {
  switch (v) {
    case Variant::kMerge: return {6, 1, 8, 16, 4, 2, 4, 2 * H};
    case Variant::kMergePositions: return {6, 1, 8, 16, 4, 2, 4, H};
    case Variant::kNgsim: return {9, 3, 8, 16, 24, 32, 64, 2};
  }
  throw ConfigError("unknown variant");
}

inline std::vector<int> action_slots(Variant v) {
  if (v == Variant::kNgsim) return {ngsim_obs::kRampA, ngsim_obs::kLeadA, ngsim_obs::kLagA};
  return {merge_obs::kU1Prev};
}

/// x_normalized = (x - offset) / scale.
struct Affine {
  Vec offset;
  Vec scale;

  static Affine identity(Eigen::Index n) { return {Vec::Zero(n), Vec::Ones(n)}; }
  Vec normalize(const Vec& x) const { return ((x - offset).array() / scale.array()).matrix(); }
  Vec denormalize(const Vec& y) const { return offset + scale.cwiseProduct(y); }
};

struct AisModel {
  using State = AisState;

  Variant kind = Variant::kMerge;
  int H = 10;
  double dt = 0.2;

  Affine input_norm;
  Affine action_norm;
  Affine output_norm;

  nn::DenseLayer enc1;
  nn::DenseLayer enc2;
  nn::GruCell gru;
  nn::DenseLayer dec1;
  nn::DenseLayer dec2;
  nn::DenseLayer dec3;

  static AisModel zeros(Variant v, int H, double dt) {
    if (v == Variant::kNgsim) H = 1;
    const Dimensions d = dimensions(v, H);
    AisModel m;
    m.kind = v;
    m.H = H;
    m.dt = dt;
    m.input_norm = Affine::identity(d.observation);
    m.action_norm = Affine::identity(d.actions);
    m.output_norm = Affine::identity(d.output);
    m.enc1 = nn::DenseLayer::zeros(d.observation, d.enc1);
    m.enc2 = nn::DenseLayer::zeros(d.enc1, d.enc2);
    m.gru = nn::GruCell::zeros(d.enc2, d.hidden);
    m.dec1 = nn::DenseLayer::zeros(d.hidden + d.actions, d.dec1);
    m.dec2 = nn::DenseLayer::zeros(d.dec1, d.dec2);
    m.dec3 = nn::DenseLayer::zeros(d.dec2, d.output);
    return m;
  }

  static AisModel random(Variant v, int H, double dt, std::uint64_t seed) {
    AisModel m = zeros(v, H, dt);
    const Dimensions d = dimensions(v, m.H);
    Rng rng(seed);
    m.enc1 = nn::DenseLayer::random(d.observation, d.enc1, rng);
    m.enc2 = nn::DenseLayer::random(d.enc1, d.enc2, rng);
    m.gru = nn::GruCell::random(d.enc2, d.hidden, rng);
    m.dec1 = nn::DenseLayer::random(d.hidden + d.actions, d.dec1, rng);
    m.dec2 = nn::DenseLayer::random(d.dec1, d.dec2, rng);
    m.dec3 = nn::DenseLayer::random(d.dec2, d.output, rng);
    return m;
  }

  /// Same architecture, every trainable array zeroed; used as a gradient buffer.
  AisModel zeros_like() const {
    AisModel g = *this;
    g.for_each_param([](const std::string&, auto& a) { a.setZero(); });
    return g;
  }

  Dimensions dims() const { return dimensions(kind, H); }
  Variant variant() const { return kind; }
  int horizon() const { return H; }

  template <class F>
  void for_each_param(F&& f) {
    enc1.for_each_param("encoder.0", f);
    enc2.for_each_param("encoder.1", f);
    gru.for_each_param("encoder.gru", f);
    dec1.for_each_param("decoder.0", f);
    dec2.for_each_param("decoder.1", f);
    dec3.for_each_param("decoder.2", f);
  }

  AisState init_state() const { return {Vec::Zero(dims().hidden)}; }

  /// Normalized encoder input: y with its action slots taken from u_prev.
  Vec encoder_input(const Observation& y, const Vec& u_prev) const {
    const Dimensions d = dims();
    nn::require_width(y.values, d.observation, "encode(y)");
    nn::require_width(u_prev, d.actions, "encode(u_prev)");
    Vec x = y.values;
    const auto slots = action_slots(kind);
    for (std::size_t i = 0; i < slots.size(); ++i) x[slots[i]] = u_prev[static_cast<Eigen::Index>(i)];
    return input_norm.normalize(x);
  }

  Vec decoder_input(const AisState& s, const Vec& u) const {
    const Dimensions d = dims();
    nn::require_width(s.s, d.hidden, "decode(s)");
    nn::require_width(u, d.actions, "decode(u)");
    Vec in(d.hidden + d.actions);
    in << s.s, action_norm.normalize(u);
    return in;
  }

  AisState encode(const AisState& s_prev, const Observation& y, const Vec& u_prev) const {
    nn::require_width(s_prev.s, dims().hidden, "encode(s_prev)");
    const Vec x = encoder_input(y, u_prev);
    const Vec e1 = nn::relu(enc1.forward(x));
    const Vec e2 = nn::relu(enc2.forward(e1));
    return {nn::gru_forward(gru, e2, s_prev.s)};
  }

  AisState encode(const AisState& s_prev, const Observation& y, double u_prev) const {
    return encode(s_prev, y, Vec::Constant(1, u_prev));
  }

  /// Decoder output in physical units, laid out like training targets.
  Vec decode_raw(const AisState& s, const Vec& u) const {
    const Vec in = decoder_input(s, u);
    const Vec d1 = nn::relu(dec1.forward(in));
    const Vec d2 = nn::relu(dec2.forward(d1));
    return output_norm.denormalize(dec3.forward(d2));
  }

  HorizonPrediction to_prediction(const Vec& raw) const {
    HorizonPrediction p;
    switch (kind) {
      case Variant::kMerge:
        p.z_hat = raw.head(H);
        p.v_hat = raw.tail(H);
        break;
      case Variant::kMergePositions:
        p.z_hat = raw;
        p.v_hat.resize(H);
        for (int k = 1; k < H; ++k) p.v_hat[k] = (raw[k] - raw[k - 1]) / dt;
        p.v_hat[0] = H > 1 ? p.v_hat[1] : 0.0;
        break;
      case Variant::kNgsim:
        p.lateral = raw.segment(0, 1);
        p.z_hat = raw.segment(1, 1);
        break;
    }
    return p;
  }

  HorizonPrediction decode(const AisState& s, const Vec& u) const {
    return to_prediction(decode_raw(s, u));
  }

  HorizonPrediction decode(const AisState& s, double u1) const {
    return decode(s, Vec::Constant(1, u1));
  }
};

/// Anything that can stand in for the learned predictor in evaluation code
/// (the trained model, or test doubles such as a ground-truth oracle).
template <class P>
concept Predictor = requires(const P& p, const typename P::State& s, const Observation& y,
                             const Vec& u) {
  { p.variant() } -> std::same_as<Variant>;
  { p.horizon() } -> std::convertible_to<int>;
  { p.init_state() } -> std::same_as<typename P::State>;
  { p.encode(s, y, u) } -> std::same_as<typename P::State>;
  { p.decode(s, u) } -> std::same_as<HorizonPrediction>;
};

static_assert(Predictor<AisModel>);

// ---------------------------------------------------------------------------
// Recorded unroll with reverse-mode gradients

/// Records an encoder unroll with optional decodes against targets, then
/// backpropagates the accumulated surrogate loss through time.
class AisGraph {
 public:
  explicit AisGraph(const AisModel& model) : model_(&model), s_(model.init_state().s) {}

  /// Encodes y. If `u_decode` and `target` are given, also decodes and adds
  /// surrogate_loss(prediction, target) to the running loss.
  void step(const Observation& y, const Vec& u_prev, const Vec* u_decode = nullptr,
            const Vec* target = nullptr) {
    const AisModel& m = *model_;
    Record r;
    r.x = m.encoder_input(y, u_prev);
    r.e1_pre = m.enc1.forward(r.x);
    r.e1 = nn::relu(r.e1_pre);
    r.e2_pre = m.enc2.forward(r.e1);
    r.e2 = nn::relu(r.e2_pre);
    s_ = nn::gru_forward(m.gru, r.e2, s_, &r.gru);
    if (u_decode && target) {
      r.decoded = true;
      r.d_in = m.decoder_input({s_}, *u_decode);
      r.d1_pre = m.dec1.forward(r.d_in);
      r.d1 = nn::relu(r.d1_pre);
      r.d2_pre = m.dec2.forward(r.d1);
      r.d2 = nn::relu(r.d2_pre);
      const Vec pred = m.output_norm.denormalize(m.dec3.forward(r.d2));
      nn::require_width(*target, pred.size(), "surrogate target");
      loss_ += (pred - 2.0 * *target).dot(pred);
      shifted_ += (pred - *target).squaredNorm();
      // d/dpred of (pred - 2 ref)^T pred is 2 (pred - ref)
      r.d_out = m.output_norm.scale.cwiseProduct(2.0 * (pred - *target));
      ++predictions_;
    }
    records_.push_back(std::move(r));
  }

  const Vec& state() const { return s_; }
  double loss() const { return loss_; }
  /// Loss shifted by the target energy: sum of squared prediction errors.
  double shifted_loss() const { return shifted_; }
  std::size_t predictions() const { return predictions_; }
  std::size_t steps() const { return records_.size(); }

  /// Accumulates d(loss)/d(params) into `grad` (same architecture as model).
  void backward(AisModel& grad) const {
    if (records_.empty()) throw UsageError("AisGraph::backward called before any forward step");
    const AisModel& m = *model_;
    const Eigen::Index hidden = m.dims().hidden;
    Vec dh = Vec::Zero(hidden);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      const Record& r = *it;
      if (r.decoded) {
        Vec d = nn::dense_backward(m.dec3, r.d2, r.d_out, grad.dec3);
        d = nn::dense_backward(m.dec2, r.d1, nn::relu_backward(r.d2_pre, d), grad.dec2);
        d = nn::dense_backward(m.dec1, r.d_in, nn::relu_backward(r.d1_pre, d), grad.dec1);
        dh += d.head(hidden);
      }
      nn::GruGrads gg = nn::gru_backward(m.gru, r.gru, dh, grad.gru);
      Vec d = nn::dense_backward(m.enc2, r.e1, nn::relu_backward(r.e2_pre, gg.dx), grad.enc2);
      nn::dense_backward(m.enc1, r.x, nn::relu_backward(r.e1_pre, d), grad.enc1);
      dh = std::move(gg.dh);
    }
  }

 private:
  struct Record {
    Vec x, e1_pre, e1, e2_pre, e2;
    nn::GruCache gru;
    bool decoded = false;
    Vec d_in, d1_pre, d1, d2_pre, d2, d_out;
  };

  const AisModel* model_;
  Vec s_;
  std::vector<Record> records_;
  double loss_ = 0.0;
  double shifted_ = 0.0;
  std::size_t predictions_ = 0;
};

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline nlohmann::json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vec json_vec(const nlohmann::json& j, Eigen::Index expected, const std::string& what) {
  const auto data = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != expected) {
    throw ModelLoadError(ModelLoadError::Kind::kDimensionMismatch,
                         what + ": expected " + std::to_string(expected) + " values");
  }
  return Eigen::Map<const Vec>(data.data(), expected);
}

inline nlohmann::json affine_json(const Affine& a) {
  return {{"offset", vec_json(a.offset)}, {"scale", vec_json(a.scale)}};
}

inline Affine json_affine(const nlohmann::json& j, Eigen::Index n, const std::string& what) {
  return {json_vec(j.at("offset"), n, what + ".offset"), json_vec(j.at("scale"), n, what + ".scale")};
}

inline nlohmann::json dims_json(const Dimensions& d) {
  return {{"observation", d.observation}, {"actions", d.actions},
          {"encoder", {{d.observation, d.enc1}, {d.enc1, d.enc2}}},
          {"gru", {d.enc2, d.hidden}},
          {"decoder", {{d.hidden + d.actions, d.dec1}, {d.dec1, d.dec2}, {d.dec2, d.output}}}};
}

}  // namespace detail

/// Self-describing JSON document. Doubles are written in shortest
/// round-trip form, so save/load is bit-exact.
inline nlohmann::json model_to_json(const AisModel& model) {
  nlohmann::json j;
  j["format"] = "aismerge-model";
  j["format_version"] = kModelFormatVersion;
  j["variant"] = to_string(model.kind);
  j["H"] = model.H;
  j["dt"] = model.dt;
  j["dimensions"] = detail::dims_json(model.dims());
  j["normalization"] = {{"input", detail::affine_json(model.input_norm)},
                        {"action", detail::affine_json(model.action_norm)},
                        {"output", detail::affine_json(model.output_norm)}};
  nlohmann::json params = nlohmann::json::array();
  AisModel copy = model;
  copy.for_each_param([&](const std::string& name, auto& a) {
    // Row-major flattening.
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(a.size()));
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      for (Eigen::Index c = 0; c < a.cols(); ++c) data.push_back(a(r, c));
    }
    params.push_back({{"name", name}, {"shape", {a.rows(), a.cols()}}, {"data", data}});
  });
  j["parameters"] = std::move(params);
  return j;
}

inline AisModel model_from_json(const nlohmann::json& j) {
  using Kind = ModelLoadError::Kind;
  try {
    if (j.at("format").get<std::string>() != "aismerge-model") {
      throw ModelLoadError(Kind::kMalformed, "not an aismerge model document");
    }
    const int version = j.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      throw ModelLoadError(Kind::kVersionMismatch,
                           "model format version " + std::to_string(version) + " (expected " +
                               std::to_string(kModelFormatVersion) + ")");
    }
    const Variant v = variant_from_string(j.at("variant").get<std::string>());
    const int H = j.at("H").get<int>();
    if (H < 1) throw ModelLoadError(Kind::kDimensionMismatch, "H must be >= 1");
    AisModel m = AisModel::zeros(v, H, j.at("dt").get<double>());
    const Dimensions d = m.dims();
    if (j.at("dimensions") != detail::dims_json(d)) {
      throw ModelLoadError(Kind::kDimensionMismatch,
                           "dimension table does not match variant " + to_string(v));
    }
    const auto& norm = j.at("normalization");
    m.input_norm = detail::json_affine(norm.at("input"), d.observation, "input");
    m.action_norm = detail::json_affine(norm.at("action"), d.actions, "action");
    m.output_norm = detail::json_affine(norm.at("output"), d.output, "output");

    const auto& params = j.at("parameters");
    std::size_t idx = 0;
    m.for_each_param([&](const std::string& name, auto& a) {
      if (idx >= params.size()) throw ModelLoadError(Kind::kMalformed, "missing parameter " + name);
      const auto& p = params.at(idx++);
      if (p.at("name").get<std::string>() != name) {
        throw ModelLoadError(Kind::kMalformed, "expected parameter " + name);
      }
      const auto shape = p.at("shape").get<std::vector<Eigen::Index>>();
      if (shape.size() != 2 || shape[0] != a.rows() || shape[1] != a.cols()) {
        throw ModelLoadError(Kind::kDimensionMismatch, "shape mismatch for " + name);
      }
      const auto data = p.at("data").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(data.size()) != a.size()) {
        throw ModelLoadError(Kind::kMalformed, "wrong element count for " + name);
      }
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < a.rows(); ++r) {
        for (Eigen::Index c = 0; c < a.cols(); ++c) a(r, c) = data[k++];
      }
    });
    if (idx != params.size()) throw ModelLoadError(Kind::kMalformed, "unexpected extra parameters");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ModelLoadError(Kind::kMalformed, std::string("malformed model document: ") + e.what());
  } catch (const ConfigError& e) {
    throw ModelLoadError(Kind::kMalformed, e.what());
  }
}

inline void save_model(const AisModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  out << model_to_json(model).dump(1) << '\n';
  if (!out) throw IoError(path, "write failed");
}

inline AisModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open model file");
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw ModelLoadError(ModelLoadError::Kind::kMalformed, path + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace aismerge
