#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "scaleloc/env.hpp"
#include "scaleloc/featpyr.hpp"
#include "scaleloc/parallel.hpp"
#include "scaleloc/policy.hpp"
#include "scaleloc/proposal.hpp"
#include "scaleloc/rng.hpp"

namespace scaleloc {

struct Trajectory {
  ScoredBox proposal;
  std::vector<StepRecord> steps;
  std::vector<BBox> boxes;  // box each action was chosen on
  std::vector<Eigen::VectorXd> features;
  BBox final_box;
  double reward = 0.0;  // terminal reward
  double ret = 0.0;     // discount^(length - 1) * reward; what the gradient uses

  std::size_t length() const { return steps.size(); }
};

// Runs one episode from a proposal: pool -> observe -> recur -> sample until
// the episode terminates. greedy picks the most likely action instead of
// sampling.
inline Trajectory rollout(const PolicyParams& params, const EnvConfig& env, const FeaturePyramid& pyr,
                          const ScoredBox& proposal, const std::vector<BBox>& gts, Rng& rng, int roi_size = 4,
                          bool greedy = false) {
  Trajectory tr;
  tr.proposal = proposal;
  EpisodeState s = reset(proposal, pyr.extent, params.dims, env.step);
  while (!s.terminated) {
    Eigen::VectorXd phi = standardize(params, s.layer_id, roi_pool(pyr, s.layer_id, s.box, roi_size));
    s.policy = recur(params, observe(params, s.layer_id, phi), s.policy);
    const ActionDistribution dist = action_distribution(params, s.policy);
    const int a = greedy ? static_cast<int>(std::max_element(dist.begin(), dist.end()) - dist.begin())
                         : sample_action(dist, rng);
    const double lp = log_prob(dist, a);
    tr.steps.push_back({s.layer_id, a, lp});
    tr.boxes.push_back(s.box);
    tr.features.push_back(std::move(phi));
    step(s, a, env, lp);
  }
  tr.final_box = s.box;
  tr.reward = reward(s.box, gts, env);
  tr.ret = std::pow(env.discount, static_cast<double>(tr.length()) - 1.0) * tr.reward;
  return tr;
}

// Mean over episodes of (R - baseline) * grad sum_t log pi(a_t | s_t), R the
// discounted episode return; the ascent direction for the expected return.
inline PolicyParams estimate_gradient(const PolicyParams& params, const std::vector<Trajectory>& episodes,
                                      double baseline) {
  PolicyParams g = PolicyParams::zeros(params.dims);
  if (episodes.empty()) throw std::invalid_argument("estimate_gradient needs at least one episode");
  const double inv = 1.0 / static_cast<double>(episodes.size());
  for (const auto& e : episodes) {
    const double adv = e.ret - baseline;
    if (adv == 0.0) continue;
    episode_log_prob(params, e.steps, e.features, &g, adv * inv);
  }
  return g;
}

struct PolicyTrainConfig {
  double lr0 = 0.01;
  int total_steps = 1000;
  int episodes_per_update = 16;
  double baseline_decay = 0.9;
  bool use_baseline = true;
  // Training episodes start from proposals whose best IoU lies in
  // [min_iou, max_iou) (falling back to any proposal when a scene has none).
  double min_iou = 0.3;
  double max_iou = 1.01;
  // Scenes whose proposals set the observation standardization; 0 keeps the
  // parameters' current one.
  int norm_scenes = 50;
  unsigned threads = 1;

  void validate() const {
    if (!(lr0 >= 1e-4 && lr0 <= 0.1)) throw ConfigError("policy_train.lr0 must be in [1e-4, 0.1]");
    if (total_steps < 1) throw ConfigError("policy_train.total_steps must be >= 1");
    if (episodes_per_update < 1) throw ConfigError("policy_train.episodes_per_update must be >= 1");
    if (!(baseline_decay >= 0.0 && baseline_decay < 1.0))
      throw ConfigError("policy_train.baseline_decay must be in [0, 1)");
    if (norm_scenes < 0) throw ConfigError("policy_train.norm_scenes must be >= 0");
  }
};

// lr0 * (1 - step / total_steps)
inline double anneal_lr(int step, const PolicyTrainConfig& cfg) {
  const double frac = std::clamp(static_cast<double>(step) / cfg.total_steps, 0.0, 1.0);
  return cfg.lr0 * (1.0 - frac);
}

// Exponential moving average of rewards. Seeded with the first batch mean so
// early updates are centered.
class RewardBaseline {
 public:
  explicit RewardBaseline(double decay = 0.9, bool enabled = true) : decay_(decay), enabled_(enabled) {}

  double value() const { return enabled_ && primed_ ? value_ : 0.0; }

  void prime(double batch_mean) {
    if (enabled_ && !primed_) value_ = batch_mean, primed_ = true;
  }

  void update(double batch_mean) {
    if (!enabled_) return;
    value_ = primed_ ? decay_ * value_ + (1.0 - decay_) * batch_mean : batch_mean;
    primed_ = true;
  }

 private:
  double decay_;
  bool enabled_;
  double value_ = 0.0;
  bool primed_ = false;
};

struct PolicyLogEntry {
  int update = 0;
  double mean_reward = 0.0;
  double mean_length = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

inline void write_policy_log_csv(std::ostream& os, const std::vector<PolicyLogEntry>& log) {
  os << "update,mean_reward,mean_length,lr,wall_seconds\n";
  for (const auto& e : log)
    os << e.update << ',' << e.mean_reward << ',' << e.mean_length << ',' << e.lr << ',' << e.wall_seconds << '\n';
}

// Everything a training or evaluation pass needs from one scene.
struct PolicyScene {
  const FeaturePyramid* pyramid = nullptr;
  std::vector<BBox> gts;
  const std::vector<ScoredBox>* proposals = nullptr;
};

// Per-layer mean and inverse standard deviation of the pooled features of
// every proposal box in the first n_scenes scenes, on every layer.
inline void fit_observation_norm(PolicyParams& params, const std::function<PolicyScene(std::size_t)>& scene_at,
                                 std::size_t n_scenes, int roi_size) {
  for (std::size_t li = 0; li < params.dims.layers.size(); ++li) {
    const int id = params.dims.layers[li].first;
    const auto dim = static_cast<Eigen::Index>(params.dims.layers[li].second);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim), sq = Eigen::VectorXd::Zero(dim);
    double count = 0.0;
    for (std::size_t si = 0; si < n_scenes; ++si) {
      const PolicyScene sc = scene_at(si);
      for (const auto& p : *sc.proposals) {
        const Eigen::VectorXd f = roi_pool(*sc.pyramid, id, p.box, roi_size);
        sum += f;
        sq += f.cwiseProduct(f);
        count += 1.0;
      }
    }
    if (count == 0.0) continue;
    const Eigen::VectorXd mean = sum / count;
    const Eigen::VectorXd var = (sq / count - mean.cwiseProduct(mean)).cwiseMax(0.0);
    params.feat_mean[li] = mean;
    params.feat_scale[li] = var.cwiseSqrt().cwiseMax(1e-3).cwiseInverse();
  }
}

// REINFORCE with an EMA baseline and a linearly annealed learning rate. Each
// update samples one scene and episodes_per_update proposals from it; every
// episode draws from its own stream derived from (seed, update, episode), so
// the result does not depend on the thread count.
inline PolicyParams train_policy(PolicyParams params, const std::function<PolicyScene(std::size_t)>& scene_at,
                                 std::size_t n_scenes, const EnvConfig& env, const PolicyTrainConfig& cfg,
                                 std::uint64_t seed, int roi_size = 4, std::vector<PolicyLogEntry>* log = nullptr) {
  if (n_scenes == 0) throw std::invalid_argument("policy training needs at least one scene");
  cfg.validate();
  env.validate();
  if (cfg.norm_scenes > 0)
    fit_observation_norm(params, scene_at, std::min(n_scenes, static_cast<std::size_t>(cfg.norm_scenes)), roi_size);
  Rng rng(derive_seed(seed, 0x3e1));
  RewardBaseline baseline(cfg.baseline_decay, cfg.use_baseline);
  const auto start = std::chrono::steady_clock::now();
  for (int u = 0; u < cfg.total_steps; ++u) {
    const std::size_t si = rng.index(n_scenes);
    const PolicyScene scene = scene_at(si);
    std::vector<const ScoredBox*> candidates;
    for (const auto& p : *scene.proposals)
      if (const double v = best_iou(p.box, scene.gts); v >= cfg.min_iou && v < cfg.max_iou) candidates.push_back(&p);
    if (candidates.empty())
      for (const auto& p : *scene.proposals) candidates.push_back(&p);
    if (candidates.empty()) continue;
    const auto n_ep = static_cast<std::size_t>(cfg.episodes_per_update);
    std::vector<const ScoredBox*> picks(n_ep);
    for (auto& p : picks) p = candidates[rng.index(candidates.size())];

    std::vector<Trajectory> episodes(n_ep);
    parallel_for(n_ep, cfg.threads, [&](std::size_t e) {
      Rng ep_rng(derive_seed(seed, static_cast<std::uint64_t>(u) + 1, e));
      episodes[e] = rollout(params, env, *scene.pyramid, *picks[e], scene.gts, ep_rng, roi_size);
    });
    double mean_r = 0.0, mean_ret = 0.0, mean_len = 0.0;
    for (const auto& e : episodes) {
      mean_r += e.reward;
      mean_ret += e.ret;
      mean_len += static_cast<double>(e.length());
    }
    mean_r /= static_cast<double>(n_ep);
    mean_ret /= static_cast<double>(n_ep);
    mean_len /= static_cast<double>(n_ep);

    baseline.prime(mean_ret);
    const PolicyParams grad = estimate_gradient(params, episodes, baseline.value());
    baseline.update(mean_ret);
    const double lr = anneal_lr(u, cfg);
    params.add_scaled(grad, lr);
    if (!params.all_finite()) {
      throw DivergenceError("policy parameters became non-finite at update " + std::to_string(u) +
                            " (lr " + std::to_string(lr) + ", mean reward " + std::to_string(mean_r) + ")");
    }
    if (log) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log->push_back({u, mean_r, mean_len, lr, wall});
    }
  }
  return params;
}

struct AuditResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Compares the analytic gradient of sum_e (R_e - b) sum_t log pi(a_t | s_t),
// with the recorded actions and features frozen, against central differences
// on a random subset of parameter entries.
inline AuditResult finite_diff_audit(const PolicyParams& params, const std::vector<Trajectory>& episodes,
                                     double baseline, double eps, double fraction, std::uint64_t seed,
                                     std::size_t min_entries = 20) {
  auto objective = [&](const PolicyParams& p) {
    double j = 0.0;
    for (const auto& e : episodes) j += (e.ret - baseline) * episode_log_prob(p, e.steps, e.features);
    return j;
  };
  PolicyParams analytic = PolicyParams::zeros(params.dims);
  for (const auto& e : episodes) episode_log_prob(params, e.steps, e.features, &analytic, e.ret - baseline);

  PolicyParams probe = params;
  auto probe_named = probe.named();
  auto grad_named = analytic.named();
  std::vector<std::pair<std::size_t, Eigen::Index>> entries;
  for (std::size_t m = 0; m < probe_named.size(); ++m)
    for (Eigen::Index k = 0; k < probe_named[m].second->size(); ++k) entries.emplace_back(m, k);
  Rng rng(seed);
  const std::size_t want =
      std::min(entries.size(), std::max(min_entries, static_cast<std::size_t>(fraction * static_cast<double>(entries.size()))));
  for (std::size_t i = 0; i < want; ++i) std::swap(entries[i], entries[i + rng.index(entries.size() - i)]);

  AuditResult res;
  for (std::size_t i = 0; i < want; ++i) {
    const auto [m, k] = entries[i];
    double& x = probe_named[m].second->data()[k];
    const double saved = x;
    x = saved + eps;
    const double up = objective(probe);
    x = saved - eps;
    const double down = objective(probe);
    x = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double exact = grad_named[m].second->data()[k];
    const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-7});
    res.max_rel_error = std::max(res.max_rel_error, std::abs(exact - numeric) / denom);
    ++res.checked;
  }
  return res;
}

}  // namespace scaleloc
