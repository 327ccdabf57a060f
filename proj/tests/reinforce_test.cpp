#include <gtest/gtest.h>

#include "scaleloc/audit.hpp"
#include "scaleloc/reinforce.hpp"
#include "scaleloc/scenegen.hpp"

using namespace scaleloc;

TEST(Reinforce, BanditEstimateIsUnbiased) {
  const auto r = bandit_check(1, 50000, 0.0);
  EXPECT_LT(r.rel_error_all, 0.02);
  EXPECT_LT(r.rel_error_action, 0.02);
}

TEST(Reinforce, BaselineLeavesExpectationUnchanged) {
  const auto none = bandit_check(2, 50000, 0.0);
  const auto centered = bandit_check(2, 50000, 0.3);
  EXPECT_LT(none.rel_error_all, 0.02);
  EXPECT_LT(centered.rel_error_all, 0.02);
}

TEST(Reinforce, EqualRewardsAndBaselineGiveZeroGradient) {
  const auto dims = audit_policy_dims(RecurrenceMode::Gated);
  const auto p = init_params(1, dims);
  auto eps = make_policy_audit_episodes(dims, 1, 4, 5);
  for (auto& e : eps) e.ret = 0.6;
  const auto g = estimate_gradient(p, eps, 0.6);
  for (const auto& [name, m] : g.named()) EXPECT_EQ(m->norm(), 0.0) << name;
}

TEST(Reinforce, AnnealedLearningRate) {
  PolicyTrainConfig cfg;
  cfg.lr0 = 0.1;
  cfg.total_steps = 100;
  EXPECT_EQ(anneal_lr(0, cfg), 0.1);
  EXPECT_EQ(anneal_lr(100, cfg), 0.0);
  EXPECT_NEAR(anneal_lr(50, cfg), 0.05, 1e-15);
}

TEST(Reinforce, BaselineIsMovingAverage) {
  RewardBaseline b(0.9);
  EXPECT_EQ(b.value(), 0.0);
  b.prime(0.5);
  EXPECT_EQ(b.value(), 0.5);
  b.update(1.0);
  EXPECT_NEAR(b.value(), 0.55, 1e-15);
  RewardBaseline off(0.9, false);
  off.prime(0.5);
  off.update(1.0);
  EXPECT_EQ(off.value(), 0.0);
}

TEST(Audit, SmallDimsPassAtModerateStep) {
  for (auto mode : {RecurrenceMode::Tanh, RecurrenceMode::Gated})
    EXPECT_LT(policy_gradient_audit(4, mode, 1e-4).max_rel_error, 1e-3);
}

TEST(Audit, ZeroAdvantageGivesZeroOnBothSides) {
  const auto dims = audit_policy_dims(RecurrenceMode::Tanh);
  auto eps = make_policy_audit_episodes(dims, 2);
  for (auto& e : eps) e.ret = 0.25;
  const auto r = finite_diff_audit(init_params(2, dims), eps, 0.25, 1e-5, 1.0, 3);
  EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(Audit, TinyStepsLoseToCancellation) {
  const double good = policy_gradient_audit(5, RecurrenceMode::Gated, 1e-5).max_rel_error;
  const double tiny = policy_gradient_audit(5, RecurrenceMode::Gated, 1e-11).max_rel_error;
  EXPECT_LT(good, 1e-4);
  EXPECT_GT(tiny, 10.0 * good);
}

namespace {

struct MiniWorld {
  GenConfig gen;
  PyramidConfig pyr;
  std::vector<Scene> scenes;
  std::vector<FeaturePyramid> pyramids;
  std::vector<std::vector<ScoredBox>> proposals;
};

MiniWorld mini_world() {
  MiniWorld w;
  w.gen.scenes = 3;
  w.gen.extent = {160, 120};
  w.gen.height_max = 110;
  w.scenes = sample_dataset(w.gen, 4);
  for (const auto& s : w.scenes) {
    w.pyramids.push_back(synthetic_pyramid(rasterize(s, w.gen), w.pyr));
    std::vector<ScoredBox> props;
    for (const auto& g : s.objects) {
      const BBox& b = g.box;
      props.push_back({clip(BBox(b.x + 0.2 * b.w, b.y - 0.1 * b.h, b.w, b.h), s.extent), 0.8, 3, 0});
      props.push_back({clip(BBox(b.x - 0.1 * b.w, b.y, 1.3 * b.w, b.h), s.extent), 0.6, 4, 1});
    }
    w.proposals.push_back(std::move(props));
  }
  return w;
}

PolicyParams train_mini(const MiniWorld& w, unsigned threads) {
  const auto dims = PolicyDims::from_pyramid(w.pyr, 16, 8, RecurrenceMode::Gated);
  PolicyTrainConfig cfg;
  cfg.lr0 = 0.05;
  cfg.total_steps = 15;
  cfg.episodes_per_update = 6;
  cfg.norm_scenes = 2;
  cfg.threads = threads;
  EnvConfig env;
  env.t_max = 8;
  auto scene_at = [&](std::size_t i) {
    return PolicyScene{&w.pyramids[i], boxes_of(w.scenes[i]), &w.proposals[i]};
  };
  return train_policy(init_params(9, dims), scene_at, w.scenes.size(), env, cfg, 9);
}

}  // namespace

TEST(Training, ThreadCountDoesNotChangeResult) {
  const auto w = mini_world();
  const auto a = train_mini(w, 1), b = train_mini(w, 3);
  auto an = a.named();
  auto bn = b.named();
  for (std::size_t i = 0; i < an.size(); ++i) EXPECT_EQ(*an[i].second, *bn[i].second) << an[i].first;
  EXPECT_EQ(a.feat_scale[1], b.feat_scale[1]);
}

TEST(Training, RolloutRespectsCapAndRecordsSteps) {
  const auto w = mini_world();
  const auto p = train_mini(w, 1);
  EnvConfig env;
  env.t_max = 8;
  Rng rng(1);
  for (const auto& prop : w.proposals[0]) {
    const auto t = rollout(p, env, w.pyramids[0], prop, boxes_of(w.scenes[0]), rng);
    EXPECT_GE(t.length(), 1u);
    EXPECT_LE(t.length(), 8u);
    EXPECT_EQ(t.features.size(), t.length());
    EXPECT_EQ(t.boxes.front(), clip(prop.box, w.scenes[0].extent));
    EXPECT_NEAR(t.ret, t.reward, 1e-15);
  }
}

TEST(Training, RejectsLearningRateOutsideRange) {
  PolicyTrainConfig cfg;
  cfg.lr0 = 0.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
