#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "scaleloc/featpyr.hpp"
#include "scaleloc/rng.hpp"

using namespace scaleloc;

namespace {

FeaturePyramid random_pyramid(std::uint64_t seed, const PyramidConfig& cfg, Extent e) {
  Rng rng(seed);
  FeaturePyramid p;
  p.extent = e;
  for (const auto& l : cfg.layers) {
    FeatureGrid g{l.id, l.stride, l.channels, ceil_div(e.height, l.stride), ceil_div(e.width, l.stride), {}};
    g.data.resize(static_cast<std::size_t>(g.channels) * g.rows * g.cols);
    for (float& v : g.data) v = static_cast<float>(rng.uniform(-1, 1));
    p.layers.push_back(std::move(g));
  }
  return p;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("scaleloc_featpyr_" + name)).string();
}

}  // namespace

TEST(Pyramid, GridShapeUsesCeiling) {
  Image img(640, 480, 0.5f);
  const auto p = synthetic_pyramid(img, PyramidConfig{});
  EXPECT_EQ(p.layer(3).cols, 80);
  EXPECT_EQ(p.layer(3).rows, 60);
  EXPECT_EQ(p.layer(5).cols, 20);
  EXPECT_EQ(p.layer(5).rows, 15);
  Image odd(100, 50, 0.5f);
  EXPECT_EQ(synthetic_pyramid(odd, PyramidConfig{}).layer(3).cols, 13);
}

TEST(Pyramid, ConstantImageHasFlatStatistics) {
  Image img(64, 48, 0.3f);
  const auto p = synthetic_pyramid(img, PyramidConfig{});
  for (const auto& g : p.layers) {
    for (int c = 0; c < g.channels; ++c)
      for (int r = 0; r < g.rows; ++r)
        for (int k = 0; k < g.cols; ++k) {
          if (c % kBlockStats == 0) EXPECT_NEAR(g.at(c, r, k), 0.3f, 1e-6);
          else EXPECT_NEAR(g.at(c, r, k), 0.0f, 1e-6);
        }
  }
}

TEST(Pyramid, FeatureDimOfFullWidthLayer) {
  EXPECT_EQ(PyramidConfig::full_size().feature_dim(3), 4096);
  EXPECT_EQ(PyramidConfig{}.feature_dim(5), 512);
}

TEST(Pyramid, RejectsNonIncreasingStrides) {
  PyramidConfig cfg;
  cfg.layers[1].stride = 8;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(RoiPool, ConstantGridGivesConstantBlock) {
  PyramidConfig cfg;
  auto p = random_pyramid(1, cfg, {128, 96});
  for (auto& g : p.layers)
    for (int c = 0; c < g.channels; ++c)
      for (int r = 0; r < g.rows; ++r)
        for (int k = 0; k < g.cols; ++k) g.at(c, r, k) = static_cast<float>(c);
  const auto v = roi_pool(p, 4, BBox(13.3, 7.1, 51.0, 70.2));
  ASSERT_EQ(v.size(), 16 * 16);
  for (Eigen::Index i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], static_cast<double>(i / 16), 1e-12);
}

TEST(RoiPool, SmallRegionMatchesGatherOracle) {
  PyramidConfig cfg;
  const auto p = random_pyramid(2, cfg, {160, 128});
  const FeatureGrid& g = p.layer(3);
  // 2x2 cells starting at cell (row 5, col 7): the window widens to cells
  // [4, 8) x [6, 10) with bins landing on cell centers.
  const int r0 = 5, c0 = 7;
  const auto v = roi_pool(p, 3, BBox(c0 * 8.0, r0 * 8.0, 16.0, 16.0));
  for (int c = 0; c < g.channels; ++c)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        EXPECT_NEAR(v[(c * 4 + i) * 4 + j], g.at(c, r0 - 1 + i, c0 - 1 + j), 1e-7)
            << "c=" << c << " i=" << i << " j=" << j;
}

TEST(RoiPool, EdgeBoxesReplicateBorder) {
  PyramidConfig cfg;
  const auto p = random_pyramid(3, cfg, {64, 64});
  const auto v = roi_pool(p, 3, BBox(0, 0, 4, 4));
  EXPECT_TRUE(v.allFinite());
  EXPECT_NEAR(v[0], p.layer(3).at(0, 0, 0), 1e-7);
}

TEST(TensorFile, RoundTripIsExact) {
  PyramidConfig cfg;
  const auto p = random_pyramid(4, cfg, {96, 64});
  const auto path = temp_path("rt.slft");
  write_feature_tensor(path, p);
  const auto q = read_feature_tensor(path, cfg, {96, 64});
  ASSERT_EQ(q.layers.size(), p.layers.size());
  for (std::size_t i = 0; i < p.layers.size(); ++i) EXPECT_EQ(q.layers[i].data, p.layers[i].data);
  std::remove(path.c_str());
}

TEST(TensorFile, ShapeMismatchIsReported) {
  PyramidConfig cfg;
  const auto p = random_pyramid(5, cfg, {96, 64});
  const auto path = temp_path("shape.slft");
  write_feature_tensor(path, p);
  PyramidConfig wide = cfg;
  wide.layers[0].channels = 12;
  try {
    read_feature_tensor(path, wide, {96, 64});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("12"), std::string::npos) << e.what();
  }
  std::remove(path.c_str());
}

TEST(TensorFile, TruncatedFileIsIntegrityError) {
  PyramidConfig cfg;
  const auto p = random_pyramid(6, cfg, {32, 32});
  const auto path = temp_path("trunc.slft");
  write_feature_tensor(path, p);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 10);
  EXPECT_THROW(read_feature_tensor(path, cfg, {32, 32}), IntegrityError);
  std::remove(path.c_str());
}
