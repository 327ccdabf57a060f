#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <vector>

#include "scaleloc/geometry.hpp"

namespace scaleloc {

struct Detection {
  BBox box;
  double score = 0.0;
  std::size_t scene = 0;
};

// Score-descending order, stable for equal scores.
inline std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> idx(dets.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return idx;
}

// Greedy suppression: walk by descending score and drop any box whose IoU
// with an already kept box exceeds iou_thresh.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh = 0.5) {
  std::vector<Detection> kept;
  for (std::size_t i : score_order(dets)) {
    const auto& d = dets[i];
    const bool suppressed =
        std::any_of(kept.begin(), kept.end(), [&](const Detection& k) { return iou(k.box, d.box) > iou_thresh; });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

struct MatchResult {
  std::vector<int> det_to_gt;  // -1 for false positives
  std::vector<int> gt_to_det;  // -1 for misses
  std::size_t tp = 0, fp = 0, fn = 0;
};

// dets must already be in descending score order. Each detection takes its
// best still-unmatched ground truth with IoU above iou_thresh (lowest index on
// ties).
inline MatchResult match(const std::vector<BBox>& dets, const std::vector<BBox>& gts, double iou_thresh = 0.5) {
  MatchResult r;
  r.det_to_gt.assign(dets.size(), -1);
  r.gt_to_det.assign(gts.size(), -1);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    double best = iou_thresh;
    int arg = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (r.gt_to_det[g] >= 0) continue;
      const double v = iou(dets[d], gts[g]);
      if (v > best) {
        best = v;
        arg = static_cast<int>(g);
      }
    }
    if (arg >= 0) {
      r.det_to_gt[d] = arg;
      r.gt_to_det[static_cast<std::size_t>(arg)] = static_cast<int>(d);
      ++r.tp;
    } else {
      ++r.fp;
    }
  }
  r.fn = gts.size() - r.tp;
  return r;
}

struct ScalePartition {
  std::vector<std::size_t> near;  // indices with h >= boundary
  std::vector<std::size_t> far;
};

inline bool is_near(const BBox& b, double boundary = 80.0) { return b.h >= boundary; }

inline ScalePartition scale_partition(const std::vector<BBox>& gts, double boundary = 80.0) {
  ScalePartition p;
  for (std::size_t i = 0; i < gts.size(); ++i) (is_near(gts[i], boundary) ? p.near : p.far).push_back(i);
  return p;
}

enum class Subset { All, Near, Far };

struct OperatingPoint {
  double threshold = 0.0;
  double fppi = 0.0;
  double miss_rate = 1.0;
};

struct EvalCurve {
  std::vector<OperatingPoint> points;  // threshold descending, first point has no detections
  std::size_t num_gts = 0;
  std::size_t num_images = 0;
  double lamr = 1.0;
};

struct EvalConfig {
  double nms_iou = 0.5;
  double match_iou = 0.5;
  double near_boundary = 80.0;
  double fppi_min = 1e-3;
  double fppi_max = 1.0;
  int fppi_points = 9;
  double miss_floor = 1e-10;
};

inline std::vector<double> reference_fppi(const EvalConfig& cfg = {}) {
  std::vector<double> refs(static_cast<std::size_t>(cfg.fppi_points));
  const double lo = std::log10(cfg.fppi_min), hi = std::log10(cfg.fppi_max);
  for (int i = 0; i < cfg.fppi_points; ++i) {
    const double t = cfg.fppi_points == 1 ? 0.0 : static_cast<double>(i) / (cfg.fppi_points - 1);
    refs[static_cast<std::size_t>(i)] = std::pow(10.0, lo + t * (hi - lo));
  }
  return refs;
}

// Geometric mean of the miss rate sampled at the reference FPPI values. At
// each reference the lowest miss rate among operating points with FPPI at or
// below it is used; with none, the miss rate is 1.
inline double lamr(const std::vector<OperatingPoint>& points, const EvalConfig& cfg = {}) {
  double acc = 0.0;
  const auto refs = reference_fppi(cfg);
  for (double ref : refs) {
    double mr = 1.0;
    for (const auto& p : points)
      if (p.fppi <= ref) mr = std::min(mr, p.miss_rate);
    acc += std::log(std::max(mr, cfg.miss_floor));
  }
  return std::exp(acc / static_cast<double>(refs.size()));
}

// Miss rate vs FPPI over a set of images. Matching runs against all ground
// truths; for the near/far subsets, detections matched to a ground truth of
// the other subset are ignored rather than counted.
inline EvalCurve evaluate(const std::vector<std::vector<Detection>>& dets_per_image,
                          const std::vector<std::vector<BBox>>& gts_per_image, Subset subset,
                          const EvalConfig& cfg = {}) {
  if (dets_per_image.size() != gts_per_image.size()) throw std::invalid_argument("one detection list per image");
  struct Scored {
    double score;
    bool tp;
  };
  std::vector<Scored> all;
  EvalCurve curve;
  curve.num_images = gts_per_image.size();
  for (std::size_t im = 0; im < gts_per_image.size(); ++im) {
    const auto& gts = gts_per_image[im];
    const auto& dets = dets_per_image[im];
    auto in_subset = [&](std::size_t g) {
      if (subset == Subset::All) return true;
      return is_near(gts[g], cfg.near_boundary) == (subset == Subset::Near);
    };
    for (std::size_t g = 0; g < gts.size(); ++g)
      if (in_subset(g)) ++curve.num_gts;
    const auto order = score_order(dets);
    std::vector<BBox> boxes;
    boxes.reserve(order.size());
    for (std::size_t i : order) boxes.push_back(dets[i].box);
    const MatchResult m = match(boxes, gts, cfg.match_iou);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const int g = m.det_to_gt[k];
      if (g < 0) {
        all.push_back({dets[order[k]].score, false});
      } else if (in_subset(static_cast<std::size_t>(g))) {
        all.push_back({dets[order[k]].score, true});
      }
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  const double n_img = std::max<std::size_t>(1, curve.num_images);
  const double n_gt = static_cast<double>(curve.num_gts);
  auto miss = [&](std::size_t tp) { return n_gt > 0 ? 1.0 - static_cast<double>(tp) / n_gt : 0.0; };
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, miss(0)});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    (all[i].tp ? tp : fp) += 1;
    if (i + 1 == all.size() || all[i + 1].score != all[i].score)
      curve.points.push_back({all[i].score, static_cast<double>(fp) / n_img, miss(tp)});
  }
  curve.lamr = lamr(curve.points, cfg);
  return curve;
}

inline void write_curve_csv(std::ostream& os, const EvalCurve& c) {
  os << "threshold,fppi,miss_rate\n" << std::setprecision(17);
  for (const auto& p : c.points) os << p.threshold << ',' << p.fppi << ',' << p.miss_rate << '\n';
}

// recall[ki][ti]: fraction of ground truths whose best IoU with the first
// ks[ki] ranked proposals of its image is at least ious[ti].
inline std::vector<std::vector<double>> recall_vs_proposals(const std::vector<std::vector<BBox>>& ranked_per_image,
                                                            const std::vector<std::vector<BBox>>& gts_per_image,
                                                            const std::vector<std::size_t>& ks,
                                                            const std::vector<double>& ious) {
  if (ranked_per_image.size() != gts_per_image.size()) throw std::invalid_argument("one proposal list per image");
  std::vector<std::vector<double>> table(ks.size(), std::vector<double>(ious.size(), 0.0));
  std::size_t n_gt = 0;
  for (const auto& g : gts_per_image) n_gt += g.size();
  if (n_gt == 0) return table;
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    std::vector<std::size_t> hits(ious.size(), 0);
    for (std::size_t im = 0; im < gts_per_image.size(); ++im) {
      const auto& props = ranked_per_image[im];
      const std::size_t k = std::min(ks[ki], props.size());
      for (const auto& g : gts_per_image[im]) {
        double best = 0.0;
        for (std::size_t p = 0; p < k; ++p) best = std::max(best, iou(props[p], g));
        for (std::size_t ti = 0; ti < ious.size(); ++ti)
          if (best >= ious[ti]) ++hits[ti];
      }
    }
    for (std::size_t ti = 0; ti < ious.size(); ++ti)
      table[ki][ti] = static_cast<double>(hits[ti]) / static_cast<double>(n_gt);
  }
  return table;
}

}  // namespace scaleloc
