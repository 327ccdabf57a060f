#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "scaleloc/policy.hpp"
#include "scaleloc/proposal.hpp"
#include "scaleloc/reinforce.hpp"
#include "scaleloc/rng.hpp"

namespace scaleloc {

// Finite-difference checks at reduced dimensions, shared by `gradcheck` and
// the test suites.

struct ProposalAuditCase {
  std::vector<ProposalHead> heads;
  std::vector<Eigen::VectorXd> features;
  std::vector<LossExample> examples;
  LossConfig loss;
};

// Two small heads (layers 3 and 4), random inputs and a mixed batch of
// positives and negatives.
inline ProposalAuditCase make_proposal_audit_case(std::uint64_t seed, int hidden, int in_dim = 6,
                                                  std::size_t batch = 12) {
  ProposalAuditCase c;
  c.loss.layer_ids = {3, 4};
  c.loss.mean_heights = {48.0, 96.0};
  c.loss.scale_factors = {5.0, 20.0};
  Rng rng(derive_seed(seed, 0xa0d));
  auto fill = [&](Eigen::MatrixXd& m, double a) {
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(-a, a);
  };
  for (int id : c.loss.layer_ids) {
    ProposalHead h;
    h.layer_id = id;
    h.in_dim = in_dim;
    h.hidden = hidden;
    h.in_mean = Eigen::VectorXd::Zero(in_dim);
    h.in_scale = Eigen::VectorXd::Ones(in_dim);
    const int mid = hidden > 0 ? hidden : in_dim;
    Eigen::MatrixXd w1(hidden, in_dim), b1(hidden, 1), w2(5, mid), b2(5, 1);
    fill(w1, 0.8);
    fill(b1, 0.3);
    fill(w2, 0.8);
    fill(b2, 0.3);
    h.w1 = w1;
    h.b1 = b1.col(0);
    h.w2 = w2;
    h.b2 = b2.col(0);
    c.heads.push_back(std::move(h));
  }
  for (std::size_t i = 0; i < batch; ++i) {
    LossExample ex;
    ex.layer_id = c.loss.layer_ids[i % 2];
    ex.positive = i % 3 == 0;
    ex.target_height = rng.uniform(30.0, 160.0);
    for (double& t : ex.target) t = rng.uniform(-2.0, 2.0);
    c.examples.push_back(ex);
    Eigen::VectorXd f(in_dim);
    for (Eigen::Index k = 0; k < in_dim; ++k) f[k] = rng.uniform(-1.0, 1.0);
    c.features.push_back(std::move(f));
  }
  return c;
}

inline double proposal_audit_objective(const ProposalAuditCase& c, std::vector<HeadGradients>* grads = nullptr) {
  std::vector<HeadOutput> outputs;
  std::vector<ProposalHead::Cache> caches(c.examples.size());
  for (std::size_t i = 0; i < c.examples.size(); ++i) {
    const auto& h = c.heads[c.loss.index_of(c.examples[i].layer_id)];
    outputs.push_back(h.forward(c.features[i], &caches[i]));
  }
  std::vector<HeadGrad> g;
  const double j = total_objective(c.examples, outputs, c.loss, grads ? &g : nullptr);
  if (grads) {
    grads->clear();
    for (const auto& h : c.heads) grads->emplace_back(h);
    for (std::size_t i = 0; i < c.examples.size(); ++i) {
      const std::size_t li = c.loss.index_of(c.examples[i].layer_id);
      head_backward(c.heads[li], caches[i], g[i], (*grads)[li]);
    }
  }
  return j;
}

// Checks every head parameter.
inline AuditResult proposal_gradient_audit(std::uint64_t seed, int hidden, double eps = 1e-6) {
  ProposalAuditCase c = make_proposal_audit_case(seed, hidden);
  std::vector<HeadGradients> analytic;
  proposal_audit_objective(c, &analytic);
  AuditResult res;
  auto check = [&](double* x, double exact) {
    const double saved = *x;
    *x = saved + eps;
    const double up = proposal_audit_objective(c);
    *x = saved - eps;
    const double down = proposal_audit_objective(c);
    *x = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-7});
    res.max_rel_error = std::max(res.max_rel_error, std::abs(exact - numeric) / denom);
    ++res.checked;
  };
  for (std::size_t li = 0; li < c.heads.size(); ++li) {
    auto& h = c.heads[li];
    const auto& g = analytic[li];
    for (Eigen::Index k = 0; k < h.w1.size(); ++k) check(h.w1.data() + k, g.w1.data()[k]);
    for (Eigen::Index k = 0; k < h.b1.size(); ++k) check(h.b1.data() + k, g.b1.data()[k]);
    for (Eigen::Index k = 0; k < h.w2.size(); ++k) check(h.w2.data() + k, g.w2.data()[k]);
    for (Eigen::Index k = 0; k < h.b2.size(); ++k) check(h.b2.data() + k, g.b2.data()[k]);
  }
  return res;
}

// Random episodes of the given length over two layers with frozen actions and
// features; returns vary per episode.
inline std::vector<Trajectory> make_policy_audit_episodes(const PolicyDims& dims, std::uint64_t seed,
                                                          std::size_t n_episodes = 3, std::size_t length = 6) {
  Rng rng(derive_seed(seed, 0xa0e));
  std::vector<Trajectory> out(n_episodes);
  for (auto& e : out) {
    for (std::size_t t = 0; t < length; ++t) {
      const auto& [id, dim] = dims.layers[rng.index(dims.layers.size())];
      StepRecord s;
      s.layer_id = id;
      s.action = static_cast<int>(rng.index(kNumActions));
      e.steps.push_back(s);
      Eigen::VectorXd f(dim);
      for (Eigen::Index k = 0; k < dim; ++k) f[k] = rng.uniform(-1.0, 1.0);
      e.features.push_back(std::move(f));
    }
    e.reward = rng.uniform(0.0, 1.0);
    e.ret = e.reward;
  }
  return out;
}

inline PolicyDims audit_policy_dims(RecurrenceMode mode) { return PolicyDims{6, 4, mode, {{3, 5}, {4, 7}}}; }

// Every parameter entry of a small policy, BPTT through length steps.
inline AuditResult policy_gradient_audit(std::uint64_t seed, RecurrenceMode mode, double eps = 1e-5,
                                         std::size_t length = 6) {
  const PolicyDims dims = audit_policy_dims(mode);
  PolicyParams p = init_params(seed, dims);
  // Larger than Glorot so the recurrence is away from its linear regime.
  p.scale(2.0);
  if (mode == RecurrenceMode::Gated) {
    Rng rng(derive_seed(seed, 0xb1a5));
    for (Eigen::Index k = 0; k < p.bg.size(); ++k) p.bg.data()[k] = rng.uniform(-0.5, 0.5);
  }
  const auto episodes = make_policy_audit_episodes(dims, seed, 3, length);
  return finite_diff_audit(p, episodes, 0.4, eps, 1.0, derive_seed(seed, 0xfd));
}

struct BanditCheck {
  double rel_error_all = 0.0;     // whole parameter vector vs enumeration
  double rel_error_action = 0.0;  // action matrix vs the softmax closed form
  double expected_reward = 0.0;
};

// One-step bandit: a fixed observation, two live arms, reward 1 on arm 0. The
// Monte-Carlo REINFORCE estimate over n_episodes sampled episodes is compared
// with the exact expectation sum_a pi(a) r(a) grad log pi(a), and its action
// block with (pi * (r - E r)) h^T.
inline BanditCheck bandit_check(std::uint64_t seed, std::size_t n_episodes, double baseline) {
  static constexpr std::array<double, kNumActions> kArmReward = {1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  const PolicyDims dims = audit_policy_dims(RecurrenceMode::Gated);
  PolicyParams p = init_params(seed, dims);
  Rng rng(derive_seed(seed, 0xba7));
  Eigen::VectorXd phi(dims.layers[0].second);
  for (Eigen::Index k = 0; k < phi.size(); ++k) phi[k] = rng.uniform(-1.0, 1.0);
  const int layer = dims.layers[0].first;
  const PolicyState s = recur(p, observe(p, layer, phi), PolicyState::zeros(dims));
  // Only actions 0 and 1 stay live: every other logit is pinned at -30.
  for (Eigen::Index a = 2; a < p.action.rows(); ++a) p.action.row(a) = -30.0 * s.h.transpose() / s.h.squaredNorm();
  const ActionDistribution pi = action_distribution(p, s);

  auto one_step = [&](int a) {
    Trajectory t;
    t.steps.push_back({layer, a, log_prob(pi, a)});
    t.features.push_back(phi);
    t.reward = t.ret = kArmReward[static_cast<std::size_t>(a)];
    return t;
  };

  PolicyParams exact = PolicyParams::zeros(dims);
  double er = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    const auto t = one_step(a);
    episode_log_prob(p, t.steps, t.features, &exact, pi[static_cast<std::size_t>(a)] * t.ret);
    er += pi[static_cast<std::size_t>(a)] * t.ret;
  }
  Eigen::MatrixXd closed(kNumActions, 1);
  for (int a = 0; a < kNumActions; ++a)
    closed(a, 0) = pi[static_cast<std::size_t>(a)] * (kArmReward[static_cast<std::size_t>(a)] - er);
  const Eigen::MatrixXd closed_action = closed * s.h.transpose();

  std::vector<Trajectory> episodes;
  episodes.reserve(n_episodes);
  for (std::size_t e = 0; e < n_episodes; ++e) episodes.push_back(one_step(sample_action(pi, rng)));
  const PolicyParams mc = estimate_gradient(p, episodes, baseline);

  double num = 0.0, den = 0.0;
  const auto mn = mc.named();
  const auto xn = exact.named();
  for (std::size_t i = 0; i < mn.size(); ++i) {
    num += (*mn[i].second - *xn[i].second).squaredNorm();
    den += xn[i].second->squaredNorm();
  }
  BanditCheck out;
  out.rel_error_all = std::sqrt(num / den);
  out.rel_error_action = (mc.action - closed_action).norm() / closed_action.norm();
  out.expected_reward = er;
  return out;
}

}  // namespace scaleloc
