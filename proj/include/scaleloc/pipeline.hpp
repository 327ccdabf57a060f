#pragma once

#include <algorithm>
#include <cstdio>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "scaleloc/anchors.hpp"
#include "scaleloc/checkpoint.hpp"
#include "scaleloc/config.hpp"
#include "scaleloc/eval.hpp"
#include "scaleloc/featpyr.hpp"
#include "scaleloc/parallel.hpp"
#include "scaleloc/policy.hpp"
#include "scaleloc/proposal.hpp"
#include "scaleloc/reinforce.hpp"
#include "scaleloc/scenegen.hpp"

namespace scaleloc {

// Scenes with their feature pyramids and ground-truth boxes held in memory.
struct Workspace {
  std::vector<Scene> scenes;
  std::vector<FeaturePyramid> pyramids;
  std::vector<std::vector<BBox>> gts;

  std::size_t size() const { return scenes.size(); }
};

inline Workspace prepare_workspace(std::vector<Scene> scenes, const RunConfig& cfg, unsigned threads,
                                   const FeatureProvider* provider = nullptr) {
  const SyntheticFeatures synthetic(cfg.pyramid);
  if (!provider) provider = &synthetic;
  Workspace ws;
  ws.scenes = std::move(scenes);
  ws.pyramids.resize(ws.scenes.size());
  ws.gts.resize(ws.scenes.size());
  parallel_for(ws.scenes.size(), threads, [&](std::size_t i) {
    const Scene& s = ws.scenes[i];
    ws.pyramids[i] = provider->build(s, rasterize(s, cfg.scenegen));
    ws.gts[i] = boxes_of(s);
  });
  return ws;
}

inline ProposalModel fit_proposals(const RunConfig& cfg, const Workspace& train, const std::vector<int>& layers,
                                   std::uint64_t seed, std::vector<ProposalLogEntry>* log = nullptr) {
  ProposalTrainConfig tc = cfg.proposal_train;
  tc.layers = layers;
  LossConfig loss = cfg.loss;
  ProposalModel model = init_proposal_model(cfg.pyramid, cfg.anchors, loss.mode, tc.hidden, seed);
  const auto anchors = generate_anchors(cfg.pyramid, cfg.anchors, cfg.scenegen.extent);
  auto image_at = [&](std::size_t i) { return TrainingImage{&train.pyramids[i], train.gts[i]}; };
  return train_proposal_model(std::move(model), anchors, image_at, train.size(), loss, tc, seed, log);
}

using ProposalSets = std::vector<std::vector<ScoredBox>>;

// Ranked proposals per scene from the given layers (all when empty).
inline ProposalSets propose(const ProposalModel& model, const Workspace& ws, const RunConfig& cfg,
                            const std::vector<int>& layers, unsigned threads) {
  ProposalSets out(ws.size());
  const auto anchors = generate_anchors(model.pyramid, model.anchors, cfg.scenegen.extent);
  parallel_for(ws.size(), threads, [&](std::size_t i) {
    out[i] = select_proposals(score_proposals(model, ws.pyramids[i], anchors, layers),
                              static_cast<std::size_t>(cfg.proposal_train.top_k), cfg.proposal_train.nms_iou);
  });
  return out;
}

inline std::vector<std::vector<BBox>> proposal_boxes(const ProposalSets& sets) {
  std::vector<std::vector<BBox>> out(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i)
    for (const auto& p : sets[i]) out[i].push_back(p.box);
  return out;
}

inline PolicyParams fit_policy(const RunConfig& cfg, const Workspace& train, const ProposalSets& proposals,
                               std::uint64_t seed, unsigned threads, std::vector<PolicyLogEntry>* log = nullptr) {
  PolicyTrainConfig pc = cfg.policy_train;
  pc.threads = threads;
  auto scene_at = [&](std::size_t i) { return PolicyScene{&train.pyramids[i], train.gts[i], &proposals[i]}; };
  return train_policy(init_params(seed, cfg.policy_dims()), scene_at, train.size(), cfg.env, pc, seed,
                      cfg.pyramid.roi_size, log);
}

// Proposals scored by objectness, suppressed at the evaluation NMS threshold.
inline std::vector<std::vector<Detection>> proposal_detections(const ProposalSets& sets, const EvalConfig& ec) {
  std::vector<std::vector<Detection>> out(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    std::vector<Detection> d;
    for (const auto& p : sets[i]) d.push_back({p.box, p.objectness, i});
    out[i] = nms(d, ec.nms_iou);
  }
  return out;
}

struct Refinement {
  std::vector<std::vector<Detection>> detections;  // after NMS
  std::vector<std::size_t> lengths;                 // one per episode
  double mean_initial_iou = 0.0;
  double mean_final_iou = 0.0;
  double mean_reward = 0.0;
};

// Runs one episode from every proposal. The refined box keeps the proposal's
// objectness as its score. Episode streams come from (seed, scene, proposal).
inline Refinement refine(const PolicyParams& params, const RunConfig& cfg, const Workspace& ws,
                         const ProposalSets& proposals, std::uint64_t seed, unsigned threads) {
  struct PerScene {
    std::vector<Detection> dets;
    std::vector<std::size_t> lengths;
    double iou0 = 0.0, iou1 = 0.0, reward = 0.0;
  };
  std::vector<PerScene> per(ws.size());
  parallel_for(ws.size(), threads, [&](std::size_t i) {
    auto& r = per[i];
    std::vector<Detection> raw;
    for (std::size_t k = 0; k < proposals[i].size(); ++k) {
      const ScoredBox& p = proposals[i][k];
      Rng rng(derive_seed(seed, 0x5ce0000 + i, k));
      const Trajectory tr = rollout(params, cfg.env, ws.pyramids[i], p, ws.gts[i], rng, cfg.pyramid.roi_size,
                                    cfg.greedy_eval);
      raw.push_back({tr.final_box, p.objectness, i});
      r.lengths.push_back(tr.length());
      r.iou0 += best_iou(p.box, ws.gts[i]);
      r.iou1 += best_iou(tr.final_box, ws.gts[i]);
      r.reward += tr.reward;
    }
    r.dets = nms(raw, cfg.eval.nms_iou);
  });
  Refinement out;
  std::size_t n = 0;
  for (auto& r : per) {
    out.detections.push_back(std::move(r.dets));
    out.lengths.insert(out.lengths.end(), r.lengths.begin(), r.lengths.end());
    out.mean_initial_iou += r.iou0;
    out.mean_final_iou += r.iou1;
    out.mean_reward += r.reward;
    n += r.lengths.size();
  }
  if (n > 0) {
    out.mean_initial_iou /= static_cast<double>(n);
    out.mean_final_iou /= static_cast<double>(n);
    out.mean_reward /= static_cast<double>(n);
  }
  return out;
}

// Lower median for even counts.
inline double median_length(std::vector<std::size_t> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return static_cast<double>(*mid);
}

struct LamrTriple {
  double all = 1.0, near = 1.0, far = 1.0;
  EvalCurve curve_all, curve_near, curve_far;
};

inline LamrTriple evaluate_all(const std::vector<std::vector<Detection>>& dets,
                               const std::vector<std::vector<BBox>>& gts, const EvalConfig& ec) {
  LamrTriple t;
  t.curve_all = evaluate(dets, gts, Subset::All, ec);
  t.curve_near = evaluate(dets, gts, Subset::Near, ec);
  t.curve_far = evaluate(dets, gts, Subset::Far, ec);
  t.all = t.curve_all.lamr;
  t.near = t.curve_near.lamr;
  t.far = t.curve_far.lamr;
  return t;
}

// Recall of the far-scale ground truths at IoU thr within the first k proposals.
inline double far_recall(const ProposalSets& sets, const std::vector<std::vector<BBox>>& gts, std::size_t k,
                         double thr, double boundary) {
  std::vector<std::vector<BBox>> far(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i)
    for (const auto& g : gts[i])
      if (!is_near(g, boundary)) far[i].push_back(g);
  return recall_vs_proposals(proposal_boxes(sets), far, {k}, {thr})[0][0];
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline void write_summary(std::ostream& os, const std::string& label, const LamrTriple& t) {
  os << label << " lamr_all " << fmt(100.0 * t.all) << "% near " << fmt(100.0 * t.near) << "% far "
     << fmt(100.0 * t.far) << "%\n";
}

// ---- the scaled end-to-end experiment ----

struct ExperimentConfig {
  std::size_t train_scenes = 1000;
  std::size_t test_scenes = 200;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::size_t recall_k = 300;
  double recall_iou = 0.5;
};

struct ExperimentResult {
  std::vector<std::pair<std::string, double>> far_recall;  // "multi", "layer3", ...
  LamrTriple proposals_only;
  LamrTriple refined;
  double median_length = 0.0;
  double mean_initial_iou = 0.0;
  double mean_final_iou = 0.0;
  std::vector<char> proposal_bytes;
  std::vector<char> policy_bytes;
  std::string report;
};

inline std::vector<Scene> experiment_scenes(const RunConfig& cfg, std::size_t n, std::uint64_t seed,
                                            std::uint64_t split) {
  GenConfig g = cfg.scenegen;
  g.scenes = static_cast<int>(n);
  return sample_dataset(g, derive_seed(seed, split));
}

inline ExperimentResult run_experiment(const RunConfig& cfg, const ExperimentConfig& ec) {
  cfg.validate();
  ExperimentResult res;
  const Workspace train = prepare_workspace(experiment_scenes(cfg, ec.train_scenes, ec.seed, 1), cfg, ec.threads);
  const Workspace test = prepare_workspace(experiment_scenes(cfg, ec.test_scenes, ec.seed, 2), cfg, ec.threads);

  const ProposalModel multi = fit_proposals(cfg, train, {}, ec.seed);
  const ProposalSets test_props = propose(multi, test, cfg, {}, ec.threads);
  res.far_recall.emplace_back("multi", far_recall(test_props, test.gts, ec.recall_k, ec.recall_iou,
                                                  cfg.eval.near_boundary));
  for (const auto& l : cfg.pyramid.layers) {
    const ProposalModel single = fit_proposals(cfg, train, {l.id}, ec.seed);
    const ProposalSets sp = propose(single, test, cfg, {l.id}, ec.threads);
    res.far_recall.emplace_back("layer" + std::to_string(l.id),
                                far_recall(sp, test.gts, ec.recall_k, ec.recall_iou, cfg.eval.near_boundary));
  }

  const ProposalSets train_props = propose(multi, train, cfg, {}, ec.threads);
  const PolicyParams policy = fit_policy(cfg, train, train_props, ec.seed, ec.threads);

  res.proposals_only = evaluate_all(proposal_detections(test_props, cfg.eval), test.gts, cfg.eval);
  const Refinement ref = refine(policy, cfg, test, test_props, ec.seed, ec.threads);
  res.refined = evaluate_all(ref.detections, test.gts, cfg.eval);
  res.median_length = median_length(ref.lengths);
  res.mean_initial_iou = ref.mean_initial_iou;
  res.mean_final_iou = ref.mean_final_iou;
  res.proposal_bytes = encode_checkpoint(proposal_checkpoint(multi));
  res.policy_bytes = encode_checkpoint(policy_checkpoint(policy));

  std::ostringstream os;
  os << "train_scenes " << ec.train_scenes << " test_scenes " << ec.test_scenes << " seed " << ec.seed << '\n';
  for (const auto& [name, r] : res.far_recall)
    os << "far_recall@" << ec.recall_iou << " k=" << ec.recall_k << ' ' << name << ' ' << fmt(r) << '\n';
  write_summary(os, "proposals", res.proposals_only);
  write_summary(os, "refined", res.refined);
  os << "median_episode_length " << fmt(res.median_length) << '\n';
  os << "mean_iou initial " << fmt(res.mean_initial_iou) << " final " << fmt(res.mean_final_iou) << '\n';
  res.report = os.str();
  return res;
}

}  // namespace scaleloc
