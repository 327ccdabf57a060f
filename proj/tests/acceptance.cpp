// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any
// fails. Usage: acceptance [config.ini]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>

#include "oracles.hpp"
#include "scaleloc/audit.hpp"
#include "scaleloc/config.hpp"
#include "scaleloc/pipeline.hpp"

using namespace scaleloc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v, const char* f = "%.3g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// 1. IoU against integer rasterization, 1000 random integer box pairs.
Outcome geometry_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1001);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const BBox a(rng.uniform_int(0, 60), rng.uniform_int(0, 60), rng.uniform_int(1, 40), rng.uniform_int(1, 40));
    const BBox b(rng.uniform_int(0, 60), rng.uniform_int(0, 60), rng.uniform_int(1, 40), rng.uniform_int(1, 40));
    worst = std::max(worst, std::abs(iou(a, b) - oracle::raster_iou(a, b)));
  }
  const double t = seconds_since(t0);
  return {worst < 1e-6 && t < 5.0, "max err " + num(worst) + ", " + num(t, "%.2f") + " s"};
}

// 2. Anchor labels against brute force on 200 random scenes.
Outcome anchor_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  GenConfig g;
  g.scenes = 200;
  const PyramidConfig pyr;
  const AnchorConfig acfg;
  const auto anchors = generate_anchors(pyr, acfg, g.extent);
  std::vector<BBox> clipped;
  for (const auto& a : anchors) clipped.push_back(oracle::clip_direct(a.box, g.extent.width, g.extent.height));
  std::size_t mismatches = 0, checked = 0;
  for (const auto& s : sample_dataset(g, 2002)) {
    const auto gts = boxes_of(s);
    const auto got = label_anchors(anchors, gts, s.extent, acfg);
    const auto want = oracle::brute_force_labels(clipped, gts, acfg.positive_iou, acfg.negative_iou);
    for (std::size_t i = 0; i < anchors.size(); ++i, ++checked)
      mismatches += got[i].label != want.label[i] || got[i].matched != want.matched[i];
  }
  const double t = seconds_since(t0);
  return {mismatches == 0 && t < 10.0,
          std::to_string(mismatches) + " mismatches in " + std::to_string(checked) + ", " + num(t, "%.2f") + " s"};
}

// 3. Layer weights and smooth-L1 knee.
Outcome loss_fixtures() {
  const LossConfig cfg;
  double sum_err = 0.0, val_err = 0.0;
  for (double h : {48.0, 96.0, 156.0}) {
    const auto a = layer_weights(h, cfg);
    const auto want = oracle::alpha(h, cfg.mean_heights, cfg.scale_factors);
    sum_err = std::max(sum_err, std::abs(std::accumulate(a.begin(), a.end(), 0.0) - 1.0));
    for (std::size_t m = 0; m < a.size(); ++m) val_err = std::max(val_err, std::abs(a[m] - want[m]));
  }
  for (double h = 1.0; h <= 480.0; h += 1.0) {
    const auto a = layer_weights(h, cfg);
    sum_err = std::max(sum_err, std::abs(std::accumulate(a.begin(), a.end(), 0.0) - 1.0));
  }
  const double inner = 0.5 * 1.0 * 1.0, outer = 1.0 - 0.5;
  const bool knee = smooth_l1({1, 0, 0, 0}) == 0.5 && inner == 0.5 && outer == 0.5 &&
                    smooth_l1({0, 0, 0.6, 0.8}) == 0.5;
  return {sum_err < 1e-12 && val_err < 1e-9 && knee,
          "sum err " + num(sum_err) + ", value err " + num(val_err) + ", knee " + (knee ? "exact" : "broken")};
}

// 4. Finite-difference audits at reduced dims, BPTT through 6 steps.
Outcome gradient_audits() {
  const auto t0 = std::chrono::steady_clock::now();
  double prop = 0.0, tanh_err = 0.0, gated_err = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    prop = std::max({prop, proposal_gradient_audit(seed, 0).max_rel_error,
                     proposal_gradient_audit(seed, 5).max_rel_error});
    tanh_err = std::max(tanh_err, policy_gradient_audit(seed, RecurrenceMode::Tanh, 1e-5, 6).max_rel_error);
    gated_err = std::max(gated_err, policy_gradient_audit(seed, RecurrenceMode::Gated, 1e-5, 6).max_rel_error);
  }
  const double t = seconds_since(t0);
  return {prop < 1e-4 && tanh_err < 1e-4 && gated_err < 1e-4 && t < 60.0,
          "proposal " + num(prop) + ", tanh " + num(tanh_err) + ", gated " + num(gated_err) + ", " +
              num(t, "%.2f") + " s"};
}

// 5. Monte-Carlo REINFORCE gradient vs the closed form.
Outcome reinforce_unbiased() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = bandit_check(5005, 50000, 0.0);
  const double t = seconds_since(t0);
  return {r.rel_error_all < 0.02 && r.rel_error_action < 0.02 && t < 60.0,
          "rel err " + num(r.rel_error_all) + " (action block " + num(r.rel_error_action) + "), " +
              num(t, "%.2f") + " s"};
}

// 6. Reward banding.
Outcome reward_banding() {
  const double a = reward_from_iou(0.8), b = reward_from_iou(0.1), c = reward_from_iou(0.45);
  return {a == 1.0 && b == 0.0 && c == 0.45, "0.8->" + num(a) + " 0.1->" + num(b) + " 0.45->" + num(c)};
}

// 7. Hand-computed LAMR fixture plus perfect and empty detectors.
Outcome eval_fixture() {
  const oracle::LamrFixture f;
  const double e_all = std::abs(evaluate(f.dets, f.gts, Subset::All).lamr - f.lamr_all);
  const double e_near = std::abs(evaluate(f.dets, f.gts, Subset::Near).lamr - f.lamr_near);
  const double e_far = std::abs(evaluate(f.dets, f.gts, Subset::Far).lamr - f.lamr_far);
  const double worst = std::max({e_all, e_near, e_far});
  const EvalConfig ec;
  const auto perfect = evaluate_all(oracle::perfect_detections(f.gts), f.gts, ec);
  const auto empty = evaluate_all(std::vector<std::vector<Detection>>(f.gts.size()), f.gts, ec);
  const bool perfect_ok = perfect.all < 1e-9 && perfect.near < 1e-9 && perfect.far < 1e-9;
  const bool empty_ok = empty.all == 1.0 && empty.near == 1.0 && empty.far == 1.0;
  return {worst < 1e-12 && perfect_ok && empty_ok, "fixture err " + num(worst) + ", perfect " +
                                                       num(100 * perfect.all) + "%, empty " + num(100 * empty.all) +
                                                       "%"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string config_path = argc > 1 ? argv[1] : SCALELOC_ACCEPTANCE_CONFIG;
  int failures = 0;
  auto report = [&](int id, const std::string& name, const Outcome& o) {
    std::cout << "criterion " << id << " " << name << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail << ")"
              << std::endl;
    failures += !o.pass;
  };
  report(1, "geometry oracle", geometry_oracle());
  report(2, "anchor labeling oracle", anchor_oracle());
  report(3, "loss fixtures", loss_fixtures());
  report(4, "gradient audits", gradient_audits());
  report(5, "REINFORCE unbiasedness", reinforce_unbiased());
  report(6, "reward banding", reward_banding());
  report(7, "evaluation fixture", eval_fixture());

  RunConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const Error& e) {
    std::cout << "criterion 8 scaled experiment: FAIL (config: " << e.what() << ")\n";
    std::cout << "criterion 9 determinism: FAIL (config: " << e.what() << ")\n";
    return 1;
  }
  ExperimentConfig ec;
  ec.threads = std::max(1u, std::thread::hardware_concurrency());

  auto t0 = std::chrono::steady_clock::now();
  const ExperimentResult first = run_experiment(cfg, ec);
  const double t_first = seconds_since(t0);
  std::cout << first.report;

  const double multi = first.far_recall.front().second;
  double best_single = 0.0;
  for (std::size_t i = 1; i < first.far_recall.size(); ++i) best_single = std::max(best_single, first.far_recall[i].second);
  const bool a = multi > best_single;
  const double far_gain = 100.0 * (first.proposals_only.far - first.refined.far);
  const double near_loss = 100.0 * (first.refined.near - first.proposals_only.near);
  const bool b = far_gain >= 5.0 && near_loss <= 1.0;
  const bool c = first.median_length >= 5.0 && first.median_length <= 20.0 && t_first < 30.0 * 60.0;
  std::ostringstream d8;
  d8 << "(a) " << (a ? "ok" : "no") << " far recall multi " << num(multi, "%.4f") << " vs best single "
     << num(best_single, "%.4f") << "; (b) " << (b ? "ok" : "no") << " far LAMR gain " << num(far_gain, "%.2f")
     << " pts, near change " << num(near_loss, "%+.2f") << " pts; (c) " << (c ? "ok" : "no") << " median length "
     << num(first.median_length) << ", " << num(t_first, "%.0f") << " s";
  report(8, "scaled experiment", {a && b && c, d8.str()});

  t0 = std::chrono::steady_clock::now();
  const ExperimentResult second = run_experiment(cfg, ec);
  const bool same_prop = first.proposal_bytes == second.proposal_bytes;
  const bool same_policy = first.policy_bytes == second.policy_bytes;
  const bool same_report = first.report == second.report;
  report(9, "determinism",
         {same_prop && same_policy && same_report,
          std::string("proposal checkpoint ") + (same_prop ? "identical" : "differs") + ", policy checkpoint " +
              (same_policy ? "identical" : "differs") + ", report " + (same_report ? "identical" : "differs") + ", " +
              num(seconds_since(t0), "%.0f") + " s"});
  return failures == 0 ? 0 : 1;
}
