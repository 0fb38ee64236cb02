#pragma once

// Small differentiable building blocks: dense layers, ReLU, a GRU cell with
// hand-derived reverse-mode gradients, a named parameter view, Adam, and a
// central finite-difference gradient checker. Everything is float64.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "aismerge/errors.hpp"
#include "aismerge/random.hpp"

namespace aismerge::nn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

inline void require_width(const Vec& x, Index expected, const char* where) {
  if (x.size() != expected) {
    throw ShapeError(std::string(where) + ": expected width " + std::to_string(expected) +
                     ", got " + std::to_string(x.size()));
  }
}

inline void fill_uniform(Mat& m, double bound, Rng& rng) {
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -bound, bound);
}

// ---------------------------------------------------------------------------
// Dense

struct DenseLayer {
  Mat weight;  // out x in
  Vec bias;    // out

  static DenseLayer zeros(Index in, Index out) {
    return {Mat::Zero(out, in), Vec::Zero(out)};
  }

  /// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) weights, zero bias.
  static DenseLayer random(Index in, Index out, Rng& rng) {
    DenseLayer l = zeros(in, out);
    fill_uniform(l.weight, std::sqrt(1.0 / static_cast<double>(in)), rng);
    return l;
  }

  Index in() const { return weight.cols(); }
  Index out() const { return weight.rows(); }

  Vec forward(const Vec& x) const {
    require_width(x, in(), "dense_forward");
    return weight * x + bias;
  }

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

inline Vec dense_forward(const DenseLayer& layer, const Vec& x) { return layer.forward(x); }

/// Accumulates dL/dW, dL/db into `grad` and returns dL/dx.
inline Vec dense_backward(const DenseLayer& layer, const Vec& x, const Vec& dy, DenseLayer& grad) {
  require_width(dy, layer.out(), "dense_backward");
  grad.weight.noalias() += dy * x.transpose();
  grad.bias += dy;
  return layer.weight.transpose() * dy;
}

inline Vec relu(const Vec& x) { return x.cwiseMax(0.0); }

inline Vec relu_backward(const Vec& pre, const Vec& dy) {
  return (pre.array() > 0.0).select(dy, 0.0);
}

inline Vec sigmoid(const Vec& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

// ---------------------------------------------------------------------------
// GRU
//
//   r  = sigmoid(Wx_r x + bx_r + Wh_r h + bh_r)          reset gate
//   g  = sigmoid(Wx_g x + bx_g + Wh_g h + bh_g)          update gate
//   n  = tanh(Wx_n x + bx_n + r * (Wh_n h + bh_n))       candidate
//   h' = (1 - g) * h + g * n
//
// The update gate weights the candidate, so an all-zero cell halves h.

struct GruCell {
  Mat w_x;  // 3n x in, row blocks [reset; update; candidate]
  Mat w_h;  // 3n x n
  Vec b_x;  // 3n
  Vec b_h;  // 3n

  static GruCell zeros(Index in, Index hidden) {
    return {Mat::Zero(3 * hidden, in), Mat::Zero(3 * hidden, hidden), Vec::Zero(3 * hidden),
            Vec::Zero(3 * hidden)};
  }

  static GruCell random(Index in, Index hidden, Rng& rng) {
    GruCell c = zeros(in, hidden);
    fill_uniform(c.w_x, std::sqrt(1.0 / static_cast<double>(in)), rng);
    fill_uniform(c.w_h, std::sqrt(1.0 / static_cast<double>(hidden)), rng);
    return c;
  }

  Index input() const { return w_x.cols(); }
  Index hidden() const { return w_h.cols(); }

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + ".w_x", w_x);
    f(prefix + ".w_h", w_h);
    f(prefix + ".b_x", b_x);
    f(prefix + ".b_h", b_h);
  }
};

struct GruCache {
  Vec x, h, r, g, n, hn;  // hn = Wh_n h + bh_n
};

inline Vec gru_forward(const GruCell& cell, const Vec& x, const Vec& h, GruCache* cache = nullptr) {
  require_width(x, cell.input(), "gru_forward(x)");
  require_width(h, cell.hidden(), "gru_forward(h)");
  const Index n = cell.hidden();
  const Vec ax = cell.w_x * x + cell.b_x;
  const Vec ah = cell.w_h * h + cell.b_h;
  Vec r = sigmoid(ax.segment(0, n) + ah.segment(0, n));
  Vec g = sigmoid(ax.segment(n, n) + ah.segment(n, n));
  Vec hn = ah.segment(2 * n, n);
  Vec cand = (ax.segment(2 * n, n).array() + r.array() * hn.array()).tanh().matrix();
  Vec out = ((1.0 - g.array()) * h.array() + g.array() * cand.array()).matrix();
  if (cache) {
    cache->x = x;
    cache->h = h;
    cache->r = std::move(r);
    cache->g = std::move(g);
    cache->n = std::move(cand);
    cache->hn = std::move(hn);
  }
  return out;
}

struct GruGrads {
  Vec dx;
  Vec dh;
};

/// Given dL/dh', accumulates parameter gradients and returns (dL/dx, dL/dh).
inline GruGrads gru_backward(const GruCell& cell, const GruCache& c, const Vec& dh_next,
                             GruCell& grad) {
  const Index n = cell.hidden();
  require_width(dh_next, n, "gru_backward");
  const auto g = c.g.array();
  const auto r = c.r.array();
  const auto cand = c.n.array();
  const auto dout = dh_next.array();

  const Eigen::ArrayXd dn_pre = dout * g * (1.0 - cand.square());
  const Eigen::ArrayXd dg_pre = dout * (cand - c.h.array()) * g * (1.0 - g);
  const Eigen::ArrayXd dr_pre = dn_pre * c.hn.array() * r * (1.0 - r);

  Vec d_ax(3 * n);
  d_ax << dr_pre.matrix(), dg_pre.matrix(), dn_pre.matrix();
  Vec d_ah(3 * n);
  d_ah << dr_pre.matrix(), dg_pre.matrix(), (dn_pre * r).matrix();

  grad.w_x.noalias() += d_ax * c.x.transpose();
  grad.b_x += d_ax;
  grad.w_h.noalias() += d_ah * c.h.transpose();
  grad.b_h += d_ah;

  GruGrads out;
  out.dx = cell.w_x.transpose() * d_ax;
  out.dh = (dout * (1.0 - g)).matrix() + cell.w_h.transpose() * d_ah;
  return out;
}

// ---------------------------------------------------------------------------
// Parameter views

/// Non-owning, ordered, uniquely named view over a model's trainable arrays.
/// The viewed model must outlive the store.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    double* data;
    Index rows;
    Index cols;
    Index size() const { return rows * cols; }
  };

  template <class Derived>
  void add(const std::string& name, Eigen::PlainObjectBase<Derived>& array) {
    if (!names_.insert(name).second) throw UsageError("duplicate parameter name: " + name);
    entries_.push_back({name, array.data(), array.rows(), array.cols()});
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t arrays() const { return entries_.size(); }

  std::size_t count() const {
    std::size_t total = 0;
    for (const auto& e : entries_) total += static_cast<std::size_t>(e.size());
    return total;
  }

  // Flat positional access across all entries.
  double& at(std::size_t i) {
    for (auto& e : entries_) {
      if (i < static_cast<std::size_t>(e.size())) return e.data[i];
      i -= static_cast<std::size_t>(e.size());
    }
    throw UsageError("parameter index out of range");
  }
  double at(std::size_t i) const { return const_cast<ParamStore*>(this)->at(i); }

  std::string name_of(std::size_t i) const {
    for (const auto& e : entries_) {
      if (i < static_cast<std::size_t>(e.size())) return e.name + "[" + std::to_string(i) + "]";
      i -= static_cast<std::size_t>(e.size());
    }
    return "?";
  }

  bool same_layout(const ParamStore& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].rows != other.entries_[i].rows || entries_[i].cols != other.entries_[i].cols) {
        return false;
      }
    }
    return true;
  }

  bool all_finite() const {
    for (const auto& e : entries_) {
      for (Index k = 0; k < e.size(); ++k) {
        if (!std::isfinite(e.data[k])) return false;
      }
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_set<std::string> names_;
};

/// Builds the ParamStore of anything exposing for_each_param(f), or
/// for_each_param(prefix, f) for single layers.
template <class Model>
ParamStore params_of(Model& model, const std::string& prefix = "layer") {
  ParamStore store;
  auto add = [&](const std::string& name, auto& array) { store.add(name, array); };
  if constexpr (requires { model.for_each_param(add); }) {
    model.for_each_param(add);
  } else {
    model.for_each_param(prefix, add);
  }
  return store;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig hp;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;

  AdamState() = default;
  explicit AdamState(AdamConfig config) : hp(config) {}
};

/// Bias-corrected Adam update of `params` in place.
inline void adam_step(ParamStore& params, const ParamStore& grads, AdamState& st) {
  if (!params.same_layout(grads)) throw ShapeError("adam_step: gradient layout mismatch");
  const auto& pe = params.entries();
  const auto& ge = grads.entries();
  if (st.m.empty()) {
    for (const auto& e : pe) {
      st.m.emplace_back(static_cast<std::size_t>(e.size()), 0.0);
      st.v.emplace_back(static_cast<std::size_t>(e.size()), 0.0);
    }
  }
  if (st.m.size() != pe.size()) throw ShapeError("adam_step: optimizer state layout mismatch");
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.hp.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.hp.beta2, static_cast<double>(st.step));
  for (std::size_t a = 0; a < pe.size(); ++a) {
    auto& m = st.m[a];
    auto& v = st.v[a];
    if (m.size() != static_cast<std::size_t>(pe[a].size())) {
      throw ShapeError("adam_step: moment shape mismatch for " + pe[a].name);
    }
    for (Index k = 0; k < pe[a].size(); ++k) {
      const double g = ge[a].data[k];
      m[k] = st.hp.beta1 * m[k] + (1.0 - st.hp.beta1) * g;
      v[k] = st.hp.beta2 * v[k] + (1.0 - st.hp.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      pe[a].data[k] -= st.hp.lr * mhat / (std::sqrt(vhat) + st.hp.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
  bool pass = false;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  // Relative errors use max(|analytic|, |numeric|, abs_floor) as denominator.
  double abs_floor = 1e-6;
  // 0 checks every parameter; otherwise a seeded random subsample of this size.
  std::size_t max_params = 0;
  std::uint64_t seed = 0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares `analytic` against central differences of `loss()` evaluated
/// while perturbing `params` in place (restored afterwards).
template <class LossFn>
GradCheckReport finite_diff_check(ParamStore& params, const ParamStore& analytic, LossFn&& loss,
                                  const GradCheckOptions& opt = {}) {
  if (!params.same_layout(analytic)) throw ShapeError("finite_diff_check: layout mismatch");
  std::vector<std::size_t> idx(params.count());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (opt.max_params != 0 && opt.max_params < idx.size()) {
    Rng rng(opt.seed);
    for (std::size_t i = 0; i < opt.max_params; ++i) {
      const auto j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(opt.max_params);
  }
  GradCheckReport rep;
  for (std::size_t i : idx) {
    double& p = params.at(i);
    const double saved = p;
    p = saved + opt.step;
    const double up = loss();
    p = saved - opt.step;
    const double down = loss();
    p = saved;
    const double numeric = (up - down) / (2.0 * opt.step);
    const double err = relative_error(analytic.at(i), numeric, opt.abs_floor);
    if (!(err <= rep.max_rel_error)) {  // NaN counts as a failure
      rep.max_rel_error = std::isfinite(err) ? err : INFINITY;
      rep.worst = params.name_of(i);
    }
    ++rep.checked;
  }
  rep.pass = rep.max_rel_error < opt.tolerance;
  return rep;
}

}  // namespace aismerge::nn
