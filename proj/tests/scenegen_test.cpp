#include <gtest/gtest.h>

#include <sstream>

#include "scaleloc/scenegen.hpp"

using namespace scaleloc;

TEST(Scenegen, SameSeedSameDataset) {
  GenConfig cfg;
  cfg.scenes = 20;
  std::ostringstream a, b;
  write_dataset(a, sample_dataset(cfg, 3));
  write_dataset(b, sample_dataset(cfg, 3));
  EXPECT_EQ(a.str(), b.str());
  std::ostringstream c;
  write_dataset(c, sample_dataset(cfg, 4));
  EXPECT_NE(a.str(), c.str());
}

TEST(Scenegen, FarFractionForSeedSeven) {
  GenConfig cfg;
  cfg.scenes = 1000;
  std::size_t total = 0, far = 0;
  for (const auto& s : sample_dataset(cfg, 7)) {
    for (const auto& g : s.objects) {
      if (total == 1000) break;
      ++total;
      far += g.box.h < 80.0;
    }
  }
  ASSERT_EQ(total, 1000u);
  const double frac = static_cast<double>(far) / 1000.0;
  EXPECT_GE(frac, 0.60);
  EXPECT_LE(frac, 0.85);
}

TEST(Scenegen, SingleObjectRange) {
  GenConfig cfg;
  cfg.scenes = 50;
  cfg.objects_min = cfg.objects_max = 1;
  for (const auto& s : sample_dataset(cfg, 1)) EXPECT_EQ(s.objects.size(), 1u);
}

TEST(Scenegen, ObjectsInsideExtentAndDisjoint) {
  GenConfig cfg;
  cfg.scenes = 100;
  for (const auto& s : sample_dataset(cfg, 2)) {
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      const BBox& b = s.objects[i].box;
      EXPECT_GE(b.x, 0.0);
      EXPECT_GE(b.y, 0.0);
      EXPECT_LE(b.x2(), cfg.extent.width);
      EXPECT_LE(b.y2(), cfg.extent.height);
      EXPECT_GE(b.h, cfg.height_min);
      EXPECT_LE(b.h, cfg.height_max);
      const double r = b.w / b.h;
      EXPECT_GE(r, 0.31 - 1e-12);
      EXPECT_LE(r, 0.51 + 1e-12);
      for (std::size_t j = 0; j < i; ++j) EXPECT_EQ(intersection_area(b, s.objects[j].box), 0.0);
    }
  }
}

TEST(Scenegen, RejectsBadConfig) {
  GenConfig cfg;
  cfg.aspect_jitter = 0.2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = GenConfig{};
  cfg.height_max = 1000;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Rasterize, EmptySceneIsBackgroundOnly) {
  GenConfig cfg;
  cfg.clutter_min = cfg.clutter_max = 0;
  cfg.noise_amp = 0.0;
  cfg.smooth_amp = 0.0;
  Scene s;
  s.extent = {64, 48};
  s.seed = 1;
  const Image img = rasterize(s, cfg);
  ASSERT_EQ(img.pixels.size(), 64u * 48u);
  for (float v : img.pixels) EXPECT_FLOAT_EQ(v, static_cast<float>(cfg.background_level));
}

TEST(Rasterize, FigureIsBrighterThanBackground) {
  GenConfig cfg;
  cfg.clutter_min = cfg.clutter_max = 0;
  cfg.noise_amp = 0.0;
  cfg.smooth_amp = 0.0;
  cfg.texture_amp = 0.0;
  Scene s;
  s.extent = {200, 200};
  s.seed = 2;
  s.objects.push_back({BBox(50, 20, 41, 100), 17});
  const Image img = rasterize(s, cfg);
  // Middle of the torso.
  EXPECT_NEAR(img.at(70, 60), cfg.background_level + cfg.contrast, 1e-6);
  EXPECT_NEAR(img.at(10, 10), cfg.background_level, 1e-6);
}

TEST(Dataset, JsonlRoundTrip) {
  GenConfig cfg;
  cfg.scenes = 10;
  const auto scenes = sample_dataset(cfg, 5);
  std::stringstream ss;
  write_dataset(ss, scenes);
  EXPECT_EQ(read_dataset(ss), scenes);
}

TEST(Dataset, EmptyFileIsEmptyDataset) {
  std::istringstream is("");
  EXPECT_TRUE(read_dataset(is).empty());
}

TEST(Dataset, MalformedLineNamesLineNumber) {
  GenConfig cfg;
  cfg.scenes = 2;
  std::ostringstream os;
  write_dataset(os, sample_dataset(cfg, 1));
  std::string text = os.str();
  text += "{\"id\": \"x\", \"extent\": [640";  // truncated third record
  std::istringstream is(text);
  try {
    read_dataset(is);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Dataset, MissingFileIsIoError) { EXPECT_THROW(read_dataset("/nonexistent/none.jsonl"), IoError); }
