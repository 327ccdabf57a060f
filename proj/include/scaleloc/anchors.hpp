#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <vector>

#include "scaleloc/error.hpp"
#include "scaleloc/featpyr.hpp"
#include "scaleloc/geometry.hpp"
#include "scaleloc/rng.hpp"

namespace scaleloc {

struct AnchorConfig {
  // One anchor height per pyramid layer, keyed by layer id.
  std::map<int, double> base_heights{{3, 48.0}, {4, 96.0}, {5, 156.0}};
  double aspect = 0.41;
  double positive_iou = 0.5;
  double negative_iou = 0.3;
  int pos_count = 32;
  double gamma = 3.0;

  void validate(const PyramidConfig& pyr) const {
    for (const auto& l : pyr.layers) {
      auto it = base_heights.find(l.id);
      if (it == base_heights.end() || !(it->second > 0.0))
        throw ConfigError("anchors need a positive base height for layer " + std::to_string(l.id));
    }
    if (!(aspect > 0.0)) throw ConfigError("anchors.aspect must be positive");
    if (!(negative_iou > 0.0 && negative_iou <= positive_iou && positive_iou < 1.0))
      throw ConfigError("anchors need 0 < negative_iou <= positive_iou < 1");
    if (pos_count < 0) throw ConfigError("anchors.pos_count must be >= 0");
    if (!(gamma >= 1.0)) throw ConfigError("anchors.gamma must be >= 1");
  }
};

struct Anchor {
  BBox box;
  int layer_id = 3;
};

enum class Label { Negative, Positive, Ignore };

struct LabeledAnchor {
  Anchor anchor;
  Label label = Label::Ignore;
  int matched = -1;      // ground-truth index, set iff positive
  double max_iou = 0.0;  // against all ground truths
  double target_height = 0.0;
};

// One anchor per lattice cell per layer, centered on the cell. Anchors that
// stick out of the image are kept; callers clip before scoring.
inline std::vector<Anchor> generate_anchors(const PyramidConfig& pyr, const AnchorConfig& cfg, Extent extent) {
  pyr.validate();
  cfg.validate(pyr);
  std::vector<Anchor> out;
  for (const auto& l : pyr.layers) {
    const int rows = ceil_div(extent.height, l.stride), cols = ceil_div(extent.width, l.stride);
    const double h = cfg.base_heights.at(l.id);
    const double w = cfg.aspect * h;
    out.reserve(out.size() + static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        out.push_back({BBox::from_center((c + 0.5) * l.stride, (r + 0.5) * l.stride, w, h), l.id});
  }
  return out;
}

// Positive: IoU above positive_iou with some ground truth, or the best anchor
// of some ground truth (lowest index wins ties, both for the anchor argmax and
// for the ground-truth assignment). Negative: max IoU below negative_iou and not
// positive. Everything else is ignored.
inline std::vector<LabeledAnchor> label_anchors(const std::vector<Anchor>& anchors, const std::vector<BBox>& gts,
                                                Extent extent, const AnchorConfig& cfg) {
  std::vector<LabeledAnchor> out(anchors.size());
  std::vector<double> best_iou(gts.size(), 0.0);
  std::vector<std::ptrdiff_t> best_anchor(gts.size(), -1);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    auto& la = out[a];
    la.anchor = anchors[a];
    la.target_height = anchors[a].box.h;
    const BBox clipped = clip(anchors[a].box, extent);
    int arg = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(clipped, gts[g]);
      if (v > la.max_iou) {
        la.max_iou = v;
        arg = static_cast<int>(g);
      }
      if (v > best_iou[g]) {
        best_iou[g] = v;
        best_anchor[g] = static_cast<std::ptrdiff_t>(a);
      }
    }
    if (la.max_iou > cfg.positive_iou) {
      la.label = Label::Positive;
      la.matched = arg;
    } else if (la.max_iou < cfg.negative_iou) {
      la.label = Label::Negative;
    } else {
      la.label = Label::Ignore;
    }
  }
  for (std::size_t g = gts.size(); g-- > 0;) {
    if (best_anchor[g] < 0) continue;
    auto& la = out[static_cast<std::size_t>(best_anchor[g])];
    la.label = Label::Positive;
    la.matched = static_cast<int>(g);
  }
  for (auto& la : out)
    if (la.label == Label::Positive) la.target_height = gts[static_cast<std::size_t>(la.matched)].h;
  return out;
}

struct Minibatch {
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
  std::size_t size() const { return positives.size() + negatives.size(); }
};

namespace detail {

// First k of a uniform random permutation (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
  k = std::min(k, pool.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.index(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace detail

// Up to pos_count positives uniformly; gamma times as many negatives. Without
// scores the negatives are uniform; with scores they are the highest-scoring
// ones (hard negatives), ties broken by lower index.
inline Minibatch sample_minibatch(const std::vector<LabeledAnchor>& labeled,
                                  const std::optional<std::vector<double>>& scores, double gamma, int pos_count,
                                  Rng& rng) {
  if (gamma < 1.0) throw std::invalid_argument("gamma must be >= 1");
  if (scores && scores->size() != labeled.size()) throw std::invalid_argument("one score per anchor required");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    if (labeled[i].label == Label::Positive) pos.push_back(i);
    if (labeled[i].label == Label::Negative) neg.push_back(i);
  }
  Minibatch batch;
  batch.positives = detail::sample_without_replacement(std::move(pos), static_cast<std::size_t>(pos_count), rng);
  const std::size_t base = batch.positives.empty() ? static_cast<std::size_t>(pos_count) : batch.positives.size();
  const auto n_neg = std::min(neg.size(), static_cast<std::size_t>(std::llround(gamma * static_cast<double>(base))));
  if (!scores) {
    batch.negatives = detail::sample_without_replacement(std::move(neg), n_neg, rng);
  } else {
    const auto& s = *scores;
    std::partial_sort(neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(n_neg), neg.end(),
                      [&](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
    neg.resize(n_neg);
    batch.negatives = std::move(neg);
  }
  return batch;
}

}  // namespace scaleloc
