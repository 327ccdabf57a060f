#include <gtest/gtest.h>

#include "scaleloc/config.hpp"

using namespace scaleloc;

TEST(Config, DefaultsValidate) { EXPECT_NO_THROW(RunConfig{}.validate()); }

TEST(Config, DumpParsesBackToSameDump) {
  const std::string text = dump_config(RunConfig{});
  EXPECT_NE(text.find("[policy_train]"), std::string::npos);
  EXPECT_NE(text.find("lambda = 10"), std::string::npos);
  EXPECT_EQ(dump_config(parse_config(text)), text);
}

TEST(Config, OverridesAreApplied) {
  const auto cfg = parse_config(
      "[policy]\nrecurrence = tanh\nobs_dim = 32\n"
      "[pyramid]\nlayer_ids = 3, 4\nstrides = 8, 16\nchannels = 4, 8\n"
      "[anchors]\nbase_heights = 40, 90\n"
      "[loss]\nmean_heights = 48, 96\nscale_factors = 5, 20\nregression = normalized\ngamma = 2\n"
      "[env]\nlayer_cycle = 3, 4\ndiscount = 0.9\n");
  EXPECT_EQ(cfg.policy.mode, RecurrenceMode::Tanh);
  EXPECT_EQ(cfg.policy.obs_dim, 32);
  ASSERT_EQ(cfg.pyramid.layers.size(), 2u);
  EXPECT_EQ(cfg.pyramid.layers[1], (LayerSpec{4, 16, 8}));
  EXPECT_EQ(cfg.anchors.base_heights.at(4), 90.0);
  EXPECT_EQ(cfg.loss.mode, RegressionMode::Normalized);
  EXPECT_EQ(cfg.anchors.gamma, 2.0);
  EXPECT_EQ(cfg.env.discount, 0.9);
}

TEST(Config, UnknownKeyIsRejected) {
  try {
    parse_config("[env]\nt_maxx = 3\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("env.t_maxx"), std::string::npos);
  }
  EXPECT_THROW(parse_config("[nosuch]\nx = 1\n"), ConfigError);
}

TEST(Config, BadValuesAreRejected) {
  EXPECT_THROW(parse_config("[env]\nt_max = three\n"), ConfigError);
  EXPECT_THROW(parse_config("[env]\nt_max = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("[policy]\nrecurrence = gru\n"), ConfigError);
  EXPECT_THROW(parse_config("[pyramid]\nstrides = 8, 16\n"), ConfigError);
  EXPECT_THROW(parse_config("[policy_train]\nlr0 = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[env]\nlayer_cycle = 3, 9\n"), ConfigError);
}

TEST(Config, MissingFileIsIoError) { EXPECT_THROW(load_config("/nonexistent/run.ini"), IoError); }

TEST(Config, PolicyDimsFollowPyramid) {
  RunConfig cfg;
  const auto d = cfg.policy_dims();
  ASSERT_EQ(d.layers.size(), 3u);
  EXPECT_EQ(d.layers[0], (std::pair<int, int>{3, 128}));
  EXPECT_EQ(d.layers[2], (std::pair<int, int>{5, 512}));
}
