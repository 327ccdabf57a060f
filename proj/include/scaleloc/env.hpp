#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "scaleloc/error.hpp"
#include "scaleloc/geometry.hpp"
#include "scaleloc/policy.hpp"
#include "scaleloc/proposal.hpp"

namespace scaleloc {

struct EnvConfig {
  int t_max = 30;
  StepConfig step;
  double reward_hi = 0.7;
  double reward_lo = 0.2;
  // The episode return is discount^(length - 1) times the terminal reward.
  double discount = 1.0;
  std::vector<int> layer_cycle{3, 4, 5};

  void validate() const {
    if (t_max < 1) throw ConfigError("env.t_max must be >= 1");
    if (!(0.0 < reward_lo && reward_lo < reward_hi && reward_hi < 1.0))
      throw ConfigError("env reward thresholds must satisfy 0 < lo < hi < 1");
    if (!(discount > 0.0 && discount <= 1.0)) throw ConfigError("env.discount must be in (0, 1]");
    if (layer_cycle.empty()) throw ConfigError("env.layer_cycle must not be empty");
    try {
      step.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("env step: ") + e.what());
    }
  }
};

struct StepLog {
  int layer_id = 3;
  BBox box;  // box the action was chosen on
  int action = 0;
  double log_prob = 0.0;
};

struct EpisodeState {
  BBox box;
  int layer_id = 3;
  int t = 1;
  PolicyState policy;
  bool terminated = false;
  Extent extent;
  std::vector<StepLog> trajectory;
};

inline EpisodeState reset(const ScoredBox& proposal, Extent extent, const PolicyDims& dims,
                          const StepConfig& step = {}) {
  EpisodeState s;
  s.box = clip(proposal.box, extent, step.min_side);
  s.layer_id = proposal.layer_id;
  s.t = 1;
  s.policy = PolicyState::zeros(dims);
  s.extent = extent;
  return s;
}

inline int next_layer(int layer_id, const std::vector<int>& cycle) {
  auto it = std::find(cycle.begin(), cycle.end(), layer_id);
  if (it == cycle.end()) throw std::invalid_argument("layer " + std::to_string(layer_id) + " not in cycle");
  return ++it == cycle.end() ? cycle.front() : *it;
}

// Applies one action. Transforms move the box then clip it to the image; the
// layer trigger advances cyclically; terminate ends the episode, as does
// reaching t_max steps.
inline void step(EpisodeState& s, int action, const EnvConfig& cfg, double log_prob = 0.0) {
  if (s.terminated) throw std::logic_error("step called on a terminated episode");
  if (action < 0 || action >= kNumActions) throw std::invalid_argument("action index out of range");
  s.trajectory.push_back({s.layer_id, s.box, action, log_prob});
  const auto a = static_cast<Action>(action);
  if (a == Action::Terminate) {
    s.terminated = true;
  } else if (a == Action::LayerTrigger) {
    s.layer_id = next_layer(s.layer_id, cfg.layer_cycle);
  } else {
    s.box = clip(apply_transform(s.box, static_cast<TransformAction>(action), cfg.step), s.extent, cfg.step.min_side);
  }
  if (static_cast<int>(s.trajectory.size()) >= cfg.t_max) s.terminated = true;
  ++s.t;
}

inline double best_iou(const BBox& box, const std::vector<BBox>& gts) {
  double best = 0.0;
  for (const auto& g : gts) best = std::max(best, iou(box, g));
  return best;
}

// 1 at or above hi, 0 at or below lo, the IoU itself in between.
inline double reward_from_iou(double v, double lo = 0.2, double hi = 0.7) {
  if (v >= hi) return 1.0;
  if (v <= lo) return 0.0;
  return v;
}

inline double reward(const BBox& final_box, const std::vector<BBox>& gts, const EnvConfig& cfg = {}) {
  if (gts.empty()) return 0.0;
  return reward_from_iou(best_iou(final_box, gts), cfg.reward_lo, cfg.reward_hi);
}

}  // namespace scaleloc
