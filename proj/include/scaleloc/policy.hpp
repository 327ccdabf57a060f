#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "scaleloc/error.hpp"
#include "scaleloc/featpyr.hpp"
#include "scaleloc/rng.hpp"

namespace scaleloc {

inline constexpr int kNumActions = 10;

// Action indices: the eight box transforms in TransformAction order, then the
// two triggers.
enum class Action : int {
  MoveLeft = 0,
  MoveRight,
  MoveUp,
  MoveDown,
  Taller,
  Shorter,
  Wider,
  Narrower,
  LayerTrigger,
  Terminate,
};

inline std::string_view to_string(Action a) {
  static constexpr std::array<std::string_view, kNumActions> names = {
      "MoveLeft", "MoveRight", "MoveUp", "MoveDown", "Taller", "Shorter", "Wider", "Narrower", "LayerTrigger", "Terminate"};
  return names[static_cast<std::size_t>(a)];
}

enum class RecurrenceMode { Tanh, Gated };

inline std::string_view to_string(RecurrenceMode m) { return m == RecurrenceMode::Tanh ? "tanh" : "gated"; }

struct PolicyDims {
  int obs_dim = 1024;
  int state_dim = 64;
  RecurrenceMode mode = RecurrenceMode::Gated;
  // (layer id, flattened pooled-feature length) in pyramid order.
  std::vector<std::pair<int, int>> layers{{3, 128}, {4, 256}, {5, 512}};

  static PolicyDims from_pyramid(const PyramidConfig& pyr, int obs_dim, int state_dim, RecurrenceMode mode) {
    PolicyDims d{obs_dim, state_dim, mode, {}};
    for (const auto& l : pyr.layers) d.layers.emplace_back(l.id, pyr.feature_dim(l.id));
    return d;
  }

  void validate() const {
    if (obs_dim < 1 || state_dim < 1) throw ConfigError("policy dims must be positive");
    if (layers.empty()) throw ConfigError("policy needs at least one layer");
    for (const auto& [id, dim] : layers)
      if (dim < 1) throw ConfigError("policy feature dim for layer " + std::to_string(id) + " must be positive");
  }

  std::size_t layer_index(int layer_id) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].first == layer_id) return i;
    throw ShapeError("policy has no observation matrix for layer " + std::to_string(layer_id));
  }

  friend bool operator==(const PolicyDims&, const PolicyDims&) = default;
};

// Observation matrices per layer, the recurrence, and the action matrix. The
// same struct doubles as the gradient container. Biases are stored as
// one-column matrices so every parameter is a matrix.
struct PolicyParams {
  PolicyDims dims;
  std::vector<Eigen::MatrixXd> obs;  // obs_dim x feature_dim(m)
  // tanh mode
  Eigen::MatrixXd s1;  // state x obs
  Eigen::MatrixXd s2;  // state x state
  // gated mode: gate blocks stacked as (input, forget, cell, output)
  Eigen::MatrixXd wx;  // 4 state x obs
  Eigen::MatrixXd wh;  // 4 state x state
  Eigen::MatrixXd bg;  // 4 state x 1
  Eigen::MatrixXd action;  // 10 x state
  // Fixed per-layer feature standardization applied before the observation
  // map; not trained. Identity unless fitted.
  std::vector<Eigen::MatrixXd> feat_mean;   // feature_dim x 1
  std::vector<Eigen::MatrixXd> feat_scale;  // feature_dim x 1

  static PolicyParams zeros(const PolicyDims& d) {
    d.validate();
    PolicyParams p;
    p.dims = d;
    const int O = d.obs_dim, S = d.state_dim;
    for (const auto& [id, dim] : d.layers) p.obs.push_back(Eigen::MatrixXd::Zero(O, dim));
    if (d.mode == RecurrenceMode::Tanh) {
      p.s1 = Eigen::MatrixXd::Zero(S, O);
      p.s2 = Eigen::MatrixXd::Zero(S, S);
    } else {
      p.wx = Eigen::MatrixXd::Zero(4 * S, O);
      p.wh = Eigen::MatrixXd::Zero(4 * S, S);
      p.bg = Eigen::MatrixXd::Zero(4 * S, 1);
    }
    p.action = Eigen::MatrixXd::Zero(kNumActions, S);
    for (const auto& [id, dim] : d.layers) {
      p.feat_mean.push_back(Eigen::MatrixXd::Zero(dim, 1));
      p.feat_scale.push_back(Eigen::MatrixXd::Ones(dim, 1));
    }
    return p;
  }

  // Every parameter matrix with a stable name, in checkpoint order.
  std::vector<std::pair<std::string, Eigen::MatrixXd*>> named() {
    std::vector<std::pair<std::string, Eigen::MatrixXd*>> out;
    for (std::size_t i = 0; i < obs.size(); ++i) out.emplace_back("obs." + std::to_string(dims.layers[i].first), &obs[i]);
    if (dims.mode == RecurrenceMode::Tanh) {
      out.emplace_back("recur.s1", &s1);
      out.emplace_back("recur.s2", &s2);
    } else {
      out.emplace_back("recur.wx", &wx);
      out.emplace_back("recur.wh", &wh);
      out.emplace_back("recur.bias", &bg);
    }
    out.emplace_back("action", &action);
    return out;
  }

  // Trainable parameters followed by the standardization buffers.
  std::vector<std::pair<std::string, Eigen::MatrixXd*>> persistent() {
    auto out = named();
    for (std::size_t i = 0; i < feat_mean.size(); ++i) {
      const std::string id = std::to_string(dims.layers[i].first);
      out.emplace_back("norm." + id + ".mean", &feat_mean[i]);
      out.emplace_back("norm." + id + ".scale", &feat_scale[i]);
    }
    return out;
  }

  std::vector<std::pair<std::string, const Eigen::MatrixXd*>> named() const {
    std::vector<std::pair<std::string, const Eigen::MatrixXd*>> out;
    for (auto& [n, m] : const_cast<PolicyParams*>(this)->named()) out.emplace_back(n, m);
    return out;
  }

  // this += scale * other
  void add_scaled(const PolicyParams& other, double scale) {
    auto mine = named();
    auto theirs = other.named();
    for (std::size_t i = 0; i < mine.size(); ++i) *mine[i].second += scale * *theirs[i].second;
  }

  void scale(double s) {
    for (auto& [n, m] : named()) *m *= s;
  }

  bool all_finite() const {
    for (const auto& [n, m] : named())
      if (!m->allFinite()) return false;
    return true;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [name, m] : named()) n += static_cast<std::size_t>(m->size());
    return n;
  }
};

// Glorot-uniform per matrix; biases start at zero.
inline PolicyParams init_params(std::uint64_t seed, const PolicyDims& dims) {
  PolicyParams p = PolicyParams::zeros(dims);
  Rng rng(derive_seed(seed, 0x901));
  for (auto& [name, m] : p.named()) {
    if (name == "recur.bias") continue;
    const double a = std::sqrt(6.0 / static_cast<double>(m->rows() + m->cols()));
    for (Eigen::Index j = 0; j < m->cols(); ++j)
      for (Eigen::Index i = 0; i < m->rows(); ++i) (*m)(i, j) = rng.uniform(-a, a);
  }
  return p;
}

struct PolicyState {
  Eigen::VectorXd h;  // recurrent state fed to the action head
  Eigen::VectorXd c;  // gated-mode cell; empty in tanh mode
  int t = 0;

  static PolicyState zeros(const PolicyDims& d) {
    PolicyState s;
    s.h = Eigen::VectorXd::Zero(d.state_dim);
    if (d.mode == RecurrenceMode::Gated) s.c = Eigen::VectorXd::Zero(d.state_dim);
    return s;
  }
};

inline Eigen::VectorXd standardize(const PolicyParams& p, int layer_id, const Eigen::VectorXd& pooled) {
  const std::size_t li = p.dims.layer_index(layer_id);
  if (pooled.size() != p.feat_mean[li].rows()) {
    throw ShapeError("layer " + std::to_string(layer_id) + " expects " + std::to_string(p.feat_mean[li].rows()) +
                     " features, got " + std::to_string(pooled.size()));
  }
  return (pooled - p.feat_mean[li].col(0)).cwiseProduct(p.feat_scale[li].col(0));
}

// o = max(theta_o^(m) phi, 0)
inline Eigen::VectorXd observe(const PolicyParams& p, int layer_id, const Eigen::VectorXd& features) {
  const auto& m = p.obs[p.dims.layer_index(layer_id)];
  if (features.size() != m.cols()) {
    throw ShapeError("layer " + std::to_string(layer_id) + " expects " + std::to_string(m.cols()) +
                     " features, got " + std::to_string(features.size()));
  }
  return (m * features).cwiseMax(0.0);
}

namespace detail {

inline double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct GateValues {
  Eigen::VectorXd i, f, g, o, c, tanh_c;
};

inline GateValues gated_forward(const PolicyParams& p, const Eigen::VectorXd& obs, const PolicyState& s) {
  const Eigen::Index S = p.dims.state_dim;
  const Eigen::VectorXd z = p.wx * obs + p.wh * s.h + p.bg.col(0);
  GateValues v;
  v.i = z.segment(0, S).unaryExpr(&logistic);
  v.f = z.segment(S, S).unaryExpr(&logistic);
  v.g = z.segment(2 * S, S).array().tanh();
  v.o = z.segment(3 * S, S).unaryExpr(&logistic);
  v.c = v.f.cwiseProduct(s.c) + v.i.cwiseProduct(v.g);
  v.tanh_c = v.c.array().tanh();
  return v;
}

}  // namespace detail

// tanh mode: s' = tanh(s1 o + s2 s). Gated mode: a standard LSTM cell whose
// output h feeds the action head.
inline PolicyState recur(const PolicyParams& p, const Eigen::VectorXd& obs, const PolicyState& s) {
  PolicyState next;
  next.t = s.t + 1;
  if (p.dims.mode == RecurrenceMode::Tanh) {
    next.h = (p.s1 * obs + p.s2 * s.h).array().tanh();
  } else {
    const auto v = detail::gated_forward(p, obs, s);
    next.c = v.c;
    next.h = v.o.cwiseProduct(v.tanh_c);
  }
  return next;
}

using ActionDistribution = std::array<double, kNumActions>;

inline ActionDistribution softmax(const Eigen::VectorXd& logits) {
  const double top = logits.maxCoeff();
  ActionDistribution d{};
  double sum = 0.0;
  for (int k = 0; k < kNumActions; ++k) sum += (d[static_cast<std::size_t>(k)] = std::exp(logits[k] - top));
  for (double& v : d) v /= sum;
  return d;
}

inline ActionDistribution action_distribution(const PolicyParams& p, const PolicyState& s) {
  return softmax(p.action * s.h);
}

// Inverse-CDF draw.
inline int sample_action(const ActionDistribution& dist, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  int last = 0;
  for (int k = 0; k < kNumActions; ++k) {
    if (dist[static_cast<std::size_t>(k)] <= 0.0) continue;
    last = k;
    acc += dist[static_cast<std::size_t>(k)];
    if (u < acc) return k;
  }
  return last;
}

inline double log_prob(const ActionDistribution& dist, int action) {
  return std::log(dist[static_cast<std::size_t>(action)]);
}

// What the backward pass needs from one step: the layer, the pooled features
// the observation was computed from, and the chosen action.
struct StepRecord {
  int layer_id = 3;
  int action = 0;
  double log_prob = 0.0;
};

// Recomputes the forward pass of a recorded episode from a zero state and
// returns sum_t log pi(a_t | s_t). If grad is given, accumulates scale times
// the gradient of that sum into it (backpropagation through time).
inline double episode_log_prob(const PolicyParams& p, const std::vector<StepRecord>& steps,
                               const std::vector<Eigen::VectorXd>& features, PolicyParams* grad = nullptr,
                               double scale = 1.0) {
  if (steps.size() != features.size()) throw ShapeError("one feature vector per step required");
  const std::size_t T = steps.size();
  const bool gated = p.dims.mode == RecurrenceMode::Gated;
  std::vector<Eigen::VectorXd> pre(T), obs(T);
  std::vector<PolicyState> states(T + 1);
  std::vector<detail::GateValues> gates(gated ? T : 0);
  std::vector<ActionDistribution> dists(T);
  states[0] = PolicyState::zeros(p.dims);
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const auto& m = p.obs[p.dims.layer_index(steps[t].layer_id)];
    if (features[t].size() != m.cols()) throw ShapeError("feature length does not match layer");
    pre[t] = m * features[t];
    obs[t] = pre[t].cwiseMax(0.0);
    if (gated) {
      gates[t] = detail::gated_forward(p, obs[t], states[t]);
      states[t + 1].c = gates[t].c;
      states[t + 1].h = gates[t].o.cwiseProduct(gates[t].tanh_c);
    } else {
      states[t + 1].h = (p.s1 * obs[t] + p.s2 * states[t].h).array().tanh();
    }
    states[t + 1].t = static_cast<int>(t + 1);
    dists[t] = action_distribution(p, states[t + 1]);
    total += log_prob(dists[t], steps[t].action);
  }
  if (!grad || T == 0) return total;

  const Eigen::Index S = p.dims.state_dim;
  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(S), dc_next = Eigen::VectorXd::Zero(S);
  for (std::size_t t = T; t-- > 0;) {
    Eigen::VectorXd dlogits(kNumActions);
    for (int k = 0; k < kNumActions; ++k) dlogits[k] = -dists[t][static_cast<std::size_t>(k)];
    dlogits[steps[t].action] += 1.0;
    dlogits *= scale;
    const Eigen::VectorXd& h = states[t + 1].h;
    grad->action.noalias() += dlogits * h.transpose();
    const Eigen::VectorXd dh = p.action.transpose() * dlogits + dh_next;
    Eigen::VectorXd dobs;
    if (gated) {
      const auto& v = gates[t];
      const Eigen::VectorXd& c_prev = states[t].c;
      const Eigen::VectorXd dgo = dh.cwiseProduct(v.tanh_c);
      const Eigen::VectorXd dc =
          dh.cwiseProduct(v.o).cwiseProduct((1.0 - v.tanh_c.array().square()).matrix()) + dc_next;
      Eigen::VectorXd dz(4 * S);
      dz.segment(0, S) = dc.cwiseProduct(v.g).cwiseProduct(v.i.cwiseProduct((1.0 - v.i.array()).matrix()));
      dz.segment(S, S) = dc.cwiseProduct(c_prev).cwiseProduct(v.f.cwiseProduct((1.0 - v.f.array()).matrix()));
      dz.segment(2 * S, S) = dc.cwiseProduct(v.i).cwiseProduct((1.0 - v.g.array().square()).matrix());
      dz.segment(3 * S, S) = dgo.cwiseProduct(v.o.cwiseProduct((1.0 - v.o.array()).matrix()));
      grad->wx.noalias() += dz * obs[t].transpose();
      grad->wh.noalias() += dz * states[t].h.transpose();
      grad->bg.col(0) += dz;
      dobs = p.wx.transpose() * dz;
      dh_next = p.wh.transpose() * dz;
      dc_next = dc.cwiseProduct(v.f);
    } else {
      const Eigen::VectorXd dpre = dh.cwiseProduct((1.0 - h.array().square()).matrix());
      grad->s1.noalias() += dpre * obs[t].transpose();
      grad->s2.noalias() += dpre * states[t].h.transpose();
      dobs = p.s1.transpose() * dpre;
      dh_next = p.s2.transpose() * dpre;
    }
    for (Eigen::Index i = 0; i < dobs.size(); ++i)
      if (pre[t][i] <= 0.0) dobs[i] = 0.0;
    grad->obs[p.dims.layer_index(steps[t].layer_id)].noalias() += dobs * features[t].transpose();
  }
  return total;
}

// Gradient of sum_t log pi(a_t | s_t) for one recorded episode.
inline PolicyParams episode_backward(const PolicyParams& p, const std::vector<StepRecord>& steps,
                                     const std::vector<Eigen::VectorXd>& features) {
  PolicyParams g = PolicyParams::zeros(p.dims);
  episode_log_prob(p, steps, features, &g, 1.0);
  return g;
}

}  // namespace scaleloc
