#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "scaleloc/eval.hpp"
#include "scaleloc/rng.hpp"

using namespace scaleloc;

using Fixture = oracle::LamrFixture;
using oracle::perfect_detections;

TEST(Nms, IdenticalBoxesKeepHigherScore) {
  const auto kept = nms({{BBox(0, 0, 10, 10), 0.3, 0}, {BBox(0, 0, 10, 10), 0.7, 0}});
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].score, 0.7);
}

TEST(Nms, MatchesReferenceOnRandomBoxes) {
  Rng rng(3);
  std::vector<Detection> dets;
  std::vector<double> scores;
  std::vector<BBox> boxes;
  for (int i = 0; i < 150; ++i) {
    const BBox b(rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(5, 30), rng.uniform(5, 30));
    const double s = std::floor(rng.uniform() * 20) / 20;  // ties on purpose
    dets.push_back({b, s, 0});
    scores.push_back(s);
    boxes.push_back(b);
  }
  const auto kept = nms(dets, 0.5);
  const auto want = oracle::nms_reference(scores, boxes, 0.5);
  ASSERT_EQ(kept.size(), want.size());
  for (std::size_t i = 0; i < kept.size(); ++i) EXPECT_EQ(kept[i].box, boxes[want[i]]);
}

TEST(Match, PerfectDetectionsHaveNoErrors) {
  const std::vector<BBox> gts{BBox(0, 0, 10, 10), BBox(30, 0, 10, 10)};
  const auto m = match(gts, gts);
  EXPECT_EQ(m.tp, 2u);
  EXPECT_EQ(m.fp, 0u);
  EXPECT_EQ(m.fn, 0u);
}

TEST(Match, TwoDetectionsOnOneGroundTruth) {
  const auto m = match({BBox(0, 0, 10, 10), BBox(1, 0, 10, 10)}, {BBox(0, 0, 10, 10)});
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.det_to_gt[1], -1);
}

TEST(Match, AgreesWithGreedyOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<BBox> dets, gts;
    for (int i = 0; i < 12; ++i)
      dets.emplace_back(rng.uniform(0, 60), rng.uniform(0, 60), rng.uniform(8, 25), rng.uniform(8, 25));
    for (int i = 0; i < 6; ++i)
      gts.emplace_back(rng.uniform(0, 60), rng.uniform(0, 60), rng.uniform(8, 25), rng.uniform(8, 25));
    EXPECT_EQ(match(dets, gts).det_to_gt, oracle::greedy_match(dets, gts, 0.5));
  }
}

TEST(Partition, EightyPixelBoundary) {
  EXPECT_TRUE(is_near(BBox(0, 0, 30, 80)));
  EXPECT_FALSE(is_near(BBox(0, 0, 30, 79.5)));
  const auto p = scale_partition({BBox(0, 0, 5, 100), BBox(0, 0, 5, 20)});
  EXPECT_EQ(p.near, std::vector<std::size_t>{0});
  EXPECT_EQ(p.far, std::vector<std::size_t>{1});
}

TEST(Lamr, ReferencePointsAreLogSpaced) {
  const auto r = reference_fppi();
  ASSERT_EQ(r.size(), 9u);
  EXPECT_DOUBLE_EQ(r.front(), 1e-3);
  EXPECT_DOUBLE_EQ(r.back(), 1.0);
  for (std::size_t i = 1; i < r.size(); ++i) EXPECT_NEAR(std::log10(r[i] / r[i - 1]), 0.375, 1e-12);
}

TEST(Lamr, HandComputedFixture) {
  const Fixture f;
  EXPECT_NEAR(evaluate(f.dets, f.gts, Subset::All).lamr, f.lamr_all, 1e-12);
  EXPECT_NEAR(evaluate(f.dets, f.gts, Subset::Near).lamr, f.lamr_near, 1e-12);
  EXPECT_NEAR(evaluate(f.dets, f.gts, Subset::Far).lamr, f.lamr_far, 1e-12);
}

TEST(Lamr, CurvePointsOfFixture) {
  const Fixture f;
  const auto c = evaluate(f.dets, f.gts, Subset::All);
  ASSERT_EQ(c.points.size(), 6u);
  EXPECT_EQ(c.num_gts, 3u);
  EXPECT_NEAR(c.points[2].miss_rate, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(c.points[5].fppi, 1.0, 1e-15);
  std::ostringstream os;
  write_curve_csv(os, c);
  EXPECT_EQ(os.str().rfind("threshold,fppi,miss_rate\n", 0), 0u);
}

TEST(Lamr, PerfectDetectorIsZero) {
  const Fixture f;
  for (auto s : {Subset::All, Subset::Near, Subset::Far}) EXPECT_LT(evaluate(perfect_detections(f.gts), f.gts, s).lamr, 1e-9);
}

TEST(Lamr, EmptyDetectorIsOne) {
  const Fixture f;
  const std::vector<std::vector<Detection>> none(3);
  for (auto s : {Subset::All, Subset::Near, Subset::Far}) EXPECT_EQ(evaluate(none, f.gts, s).lamr, 1.0);
}

TEST(Lamr, PartitionCreditNeverExceedsOverall) {
  Rng rng(6);
  std::vector<std::vector<BBox>> gts(20);
  std::vector<std::vector<Detection>> dets(20);
  for (std::size_t i = 0; i < 20; ++i) {
    for (int k = 0; k < 3; ++k) {
      const double h = rng.uniform(30, 150);
      gts[i].emplace_back(rng.uniform(0, 400), rng.uniform(0, 300), 0.4 * h, h);
      const BBox& g = gts[i].back();
      dets[i].push_back({BBox(g.x + rng.uniform(-5, 5), g.y + rng.uniform(-5, 5), g.w, g.h), rng.uniform(), i});
    }
  }
  auto found = [](const EvalCurve& c) { return (1.0 - c.points.back().miss_rate) * static_cast<double>(c.num_gts); };
  const auto all = evaluate(dets, gts, Subset::All);
  const auto near = evaluate(dets, gts, Subset::Near);
  const auto far = evaluate(dets, gts, Subset::Far);
  EXPECT_EQ(near.num_gts + far.num_gts, all.num_gts);
  EXPECT_LE(found(near) + found(far), found(all) + 1e-9);
}

TEST(Recall, ZeroProposalsGiveZero) {
  const auto t = recall_vs_proposals({{BBox(0, 0, 5, 5)}}, {{BBox(0, 0, 5, 5)}}, {0, 1}, {0.5});
  EXPECT_EQ(t[0][0], 0.0);
  EXPECT_EQ(t[1][0], 1.0);
}

TEST(Recall, AllProposalsMatchBruteForce) {
  Rng rng(7);
  std::vector<std::vector<BBox>> props(5), gts(5);
  for (std::size_t i = 0; i < 5; ++i) {
    for (int k = 0; k < 40; ++k)
      props[i].emplace_back(rng.uniform(0, 80), rng.uniform(0, 80), rng.uniform(5, 30), rng.uniform(5, 30));
    for (int k = 0; k < 4; ++k)
      gts[i].emplace_back(rng.uniform(0, 80), rng.uniform(0, 80), rng.uniform(5, 30), rng.uniform(5, 30));
  }
  std::size_t hit = 0, n = 0;
  for (std::size_t i = 0; i < 5; ++i)
    for (const auto& g : gts[i]) {
      ++n;
      bool any = false;
      for (const auto& p : props[i]) any = any || oracle::iou_direct(p, g) >= 0.5;
      hit += any;
    }
  const auto t = recall_vs_proposals(props, gts, {1000}, {0.5});
  EXPECT_NEAR(t[0][0], static_cast<double>(hit) / n, 1e-15);
}
