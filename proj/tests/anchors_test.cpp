#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.hpp"
#include "scaleloc/anchors.hpp"
#include "scaleloc/scenegen.hpp"

using namespace scaleloc;

namespace {

// A single-layer, single-anchor setup for the labeling cases.
std::vector<Anchor> one_anchor(const BBox& b) { return {Anchor{b, 3}}; }

std::vector<LabeledAnchor> synthetic_labels(std::size_t pos, std::size_t neg) {
  std::vector<LabeledAnchor> out;
  for (std::size_t i = 0; i < pos + neg; ++i) {
    LabeledAnchor la;
    la.label = i < pos ? Label::Positive : Label::Negative;
    out.push_back(la);
  }
  return out;
}

}  // namespace

TEST(Anchors, LatticeCount) {
  const auto anchors = generate_anchors(PyramidConfig{}, AnchorConfig{}, {640, 480});
  const auto n3 = std::count_if(anchors.begin(), anchors.end(), [](const Anchor& a) { return a.layer_id == 3; });
  EXPECT_EQ(n3, 4800);
  EXPECT_EQ(anchors.size(), 4800u + 1200u + 300u);
}

TEST(Anchors, ShapesFollowBaseHeights) {
  const auto anchors = generate_anchors(PyramidConfig{}, AnchorConfig{}, {640, 480});
  for (const auto& a : anchors) {
    const double h = a.layer_id == 3 ? 48.0 : a.layer_id == 4 ? 96.0 : 156.0;
    EXPECT_DOUBLE_EQ(a.box.h, h);
    EXPECT_NEAR(a.box.w, 0.41 * h, 1e-12);
  }
  EXPECT_DOUBLE_EQ(anchors[0].box.cx(), 4.0);
  EXPECT_DOUBLE_EQ(anchors[0].box.cy(), 4.0);
}

TEST(Labeling, HighOverlapIsPositive) {
  // Second anchor overlaps more so the first is not the gt's best.
  const BBox gt(0, 0, 10, 10);
  std::vector<Anchor> anchors{{BBox(0, 0, 10, 6), 3}, {BBox(0, 0, 10, 9), 3}};
  ASSERT_NEAR(iou(anchors[0].box, gt), 0.6, 1e-12);
  const auto out = label_anchors(anchors, {gt}, {100, 100}, AnchorConfig{});
  EXPECT_EQ(out[0].label, Label::Positive);
  EXPECT_EQ(out[0].matched, 0);
}

TEST(Labeling, LowOverlapIsNegative) {
  const BBox gt(0, 0, 10, 10);
  std::vector<Anchor> anchors{{BBox(0, 0, 10, 2), 3}, {BBox(0, 0, 10, 10), 3}};
  ASSERT_NEAR(iou(anchors[0].box, gt), 0.2, 1e-12);
  const auto out = label_anchors(anchors, {gt}, {100, 100}, AnchorConfig{});
  EXPECT_EQ(out[0].label, Label::Negative);
  EXPECT_EQ(out[0].matched, -1);
}

TEST(Labeling, BestAnchorIsPositiveBelowThreshold) {
  const BBox gt(0, 0, 10, 10);
  const auto out = label_anchors(one_anchor(BBox(0, 0, 10, 4)), {gt}, {100, 100}, AnchorConfig{});
  ASSERT_NEAR(out[0].max_iou, 0.4, 1e-12);
  EXPECT_EQ(out[0].label, Label::Positive);
  EXPECT_DOUBLE_EQ(out[0].target_height, 10.0);
}

TEST(Labeling, MiddleBandIsIgnored) {
  const BBox gt(0, 0, 10, 10);
  std::vector<Anchor> anchors{{BBox(0, 0, 10, 4), 3}, {BBox(0, 0, 10, 10), 3}};
  EXPECT_EQ(label_anchors(anchors, {gt}, {100, 100}, AnchorConfig{})[0].label, Label::Ignore);
}

TEST(Labeling, NoGroundTruthMeansAllNegative) {
  const auto anchors = generate_anchors(PyramidConfig{}, AnchorConfig{}, {64, 64});
  for (const auto& la : label_anchors(anchors, {}, {64, 64}, AnchorConfig{})) EXPECT_EQ(la.label, Label::Negative);
}

TEST(Labeling, MatchesBruteForceOnRandomScenes) {
  GenConfig g;
  g.scenes = 40;
  const PyramidConfig pyr;
  const AnchorConfig acfg;
  const auto anchors = generate_anchors(pyr, acfg, g.extent);
  std::vector<BBox> clipped;
  for (const auto& a : anchors) clipped.push_back(oracle::clip_direct(a.box, g.extent.width, g.extent.height));
  for (const auto& s : sample_dataset(g, 13)) {
    const auto gts = boxes_of(s);
    const auto got = label_anchors(anchors, gts, s.extent, acfg);
    const auto want = oracle::brute_force_labels(clipped, gts, acfg.positive_iou, acfg.negative_iou);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      ASSERT_EQ(got[i].label, want.label[i]) << s.id << " anchor " << i;
      ASSERT_EQ(got[i].matched, want.matched[i]) << s.id << " anchor " << i;
    }
  }
}

TEST(Minibatch, ThirtyTwoPositivesNinetySixNegatives) {
  Rng rng(1);
  const auto b = sample_minibatch(synthetic_labels(50, 500), std::nullopt, 3.0, 32, rng);
  EXPECT_EQ(b.positives.size(), 32u);
  EXPECT_EQ(b.negatives.size(), 96u);
  EXPECT_EQ(b.size(), 128u);
}

TEST(Minibatch, UniformDrawIsReproducible) {
  const auto labels = synthetic_labels(50, 500);
  Rng a(7), b(7);
  const auto x = sample_minibatch(labels, std::nullopt, 3.0, 32, a);
  const auto y = sample_minibatch(labels, std::nullopt, 3.0, 32, b);
  EXPECT_EQ(x.positives, y.positives);
  EXPECT_EQ(x.negatives, y.negatives);
  std::vector<std::size_t> n = x.negatives;
  std::sort(n.begin(), n.end());
  EXPECT_EQ(std::unique(n.begin(), n.end()), n.end());
}

TEST(Minibatch, HardNegativesAreTheTopScored) {
  const auto labels = synthetic_labels(40, 400);
  Rng rng(3), srng(4);
  std::vector<double> scores(labels.size());
  for (auto& s : scores) s = srng.uniform();
  const auto b = sample_minibatch(labels, scores, 3.0, 32, rng);
  std::vector<std::size_t> neg(400);
  for (std::size_t i = 0; i < 400; ++i) neg[i] = 40 + i;
  std::sort(neg.begin(), neg.end(), [&](std::size_t a, std::size_t c) { return scores[a] > scores[c]; });
  neg.resize(96);
  EXPECT_EQ(b.negatives, neg);
}

TEST(Minibatch, FewPositivesKeepRatio) {
  Rng rng(1);
  const auto b = sample_minibatch(synthetic_labels(5, 500), std::nullopt, 3.0, 32, rng);
  EXPECT_EQ(b.positives.size(), 5u);
  EXPECT_EQ(b.negatives.size(), 15u);
}
