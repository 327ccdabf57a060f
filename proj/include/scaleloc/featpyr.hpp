#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scaleloc/error.hpp"
#include "scaleloc/geometry.hpp"
#include "scaleloc/scenegen.hpp"

namespace scaleloc {

struct LayerSpec {
  int id = 3;
  int stride = 8;
  int channels = 8;
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct PyramidConfig {
  std::vector<LayerSpec> layers{{3, 8, 8}, {4, 16, 16}, {5, 32, 32}};
  int roi_size = 4;

  // Channel counts of the C3-C5 backbone layers.
  static PyramidConfig full_size() { return {{{3, 8, 256}, {4, 16, 512}, {5, 32, 1024}}, 4}; }

  void validate() const {
    if (layers.empty()) throw ConfigError("pyramid needs at least one layer");
    if (roi_size < 1) throw ConfigError("pyramid.roi_size must be >= 1");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].stride <= 0 || layers[i].channels <= 0)
        throw ConfigError("pyramid strides and channels must be positive");
      if (i > 0 && layers[i].stride <= layers[i - 1].stride)
        throw ConfigError("pyramid strides must be strictly increasing");
      for (std::size_t j = 0; j < i; ++j)
        if (layers[j].id == layers[i].id) throw ConfigError("pyramid layer ids must be unique");
    }
  }

  bool has_layer(int id) const {
    return std::any_of(layers.begin(), layers.end(), [id](const LayerSpec& l) { return l.id == id; });
  }

  const LayerSpec& layer(int id) const {
    for (const auto& l : layers)
      if (l.id == id) return l;
    throw std::out_of_range("unknown layer id " + std::to_string(id));
  }

  std::size_t index_of(int id) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].id == id) return i;
    throw std::out_of_range("unknown layer id " + std::to_string(id));
  }

  int feature_dim(int id) const { return roi_size * roi_size * layer(id).channels; }
};

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

// channels x rows x cols, row-major.
struct FeatureGrid {
  int layer_id = 0;
  int stride = 1;
  int channels = 0;
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  float at(int c, int r, int col) const {
    return data[(static_cast<std::size_t>(c) * rows + r) * cols + col];
  }
  float& at(int c, int r, int col) { return data[(static_cast<std::size_t>(c) * rows + r) * cols + col]; }
};

struct FeaturePyramid {
  Extent extent;
  std::vector<FeatureGrid> layers;

  const FeatureGrid& layer(int id) const {
    for (const auto& g : layers)
      if (g.layer_id == id) return g;
    throw std::out_of_range("pyramid has no layer " + std::to_string(id));
  }
};

namespace detail {

// Summed-area table with a zero first row and column.
class Integral {
 public:
  Integral(int w, int h) : w_(w), h_(h), s_(static_cast<std::size_t>(w + 1) * (h + 1), 0.0) {}

  template <class F>
  void build(F value) {
    for (int y = 0; y < h_; ++y) {
      double row = 0.0;
      for (int x = 0; x < w_; ++x) {
        row += value(x, y);
        s_[idx(x + 1, y + 1)] = s_[idx(x + 1, y)] + row;
      }
    }
  }

  // Sum over [x0, x1) x [y0, y1).
  double sum(int x0, int y0, int x1, int y1) const {
    return s_[idx(x1, y1)] - s_[idx(x0, y1)] - s_[idx(x1, y0)] + s_[idx(x0, y0)];
  }

 private:
  std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * (w_ + 1) + x; }
  int w_, h_;
  std::vector<double> s_;
};

}  // namespace detail

// Number of block statistics per context window: mean intensity, mean
// horizontal gradient magnitude, mean vertical gradient magnitude, standard
// deviation.
inline constexpr int kBlockStats = 4;

// Default provider. Channel c holds statistic (c % 4) over the stride block
// dilated by (c / 4) * stride / 2 pixels on every side, clipped to the image.
inline FeaturePyramid synthetic_pyramid(const Image& img, const PyramidConfig& cfg) {
  cfg.validate();
  const int W = img.width, H = img.height;
  detail::Integral sum_i(W, H), sum_gx(W, H), sum_gy(W, H), sum_sq(W, H);
  sum_i.build([&](int x, int y) { return static_cast<double>(img.at(x, y)); });
  sum_sq.build([&](int x, int y) {
    const double v = img.at(x, y);
    return v * v;
  });
  sum_gx.build([&](int x, int y) {
    return x + 1 < W ? std::abs(static_cast<double>(img.at(x + 1, y)) - img.at(x, y)) : 0.0;
  });
  sum_gy.build([&](int x, int y) {
    return y + 1 < H ? std::abs(static_cast<double>(img.at(x, y + 1)) - img.at(x, y)) : 0.0;
  });

  FeaturePyramid p;
  p.extent = {W, H};
  for (const auto& spec : cfg.layers) {
    FeatureGrid g;
    g.layer_id = spec.id;
    g.stride = spec.stride;
    g.channels = spec.channels;
    g.rows = ceil_div(H, spec.stride);
    g.cols = ceil_div(W, spec.stride);
    g.data.assign(static_cast<std::size_t>(g.channels) * g.rows * g.cols, 0.0f);
    const int rings = ceil_div(spec.channels, kBlockStats);
    for (int ring = 0; ring < rings; ++ring) {
      const int pad = ring * spec.stride / 2;
      for (int r = 0; r < g.rows; ++r) {
        const int y0 = std::max(0, r * spec.stride - pad);
        const int y1 = std::min(H, (r + 1) * spec.stride + pad);
        for (int c = 0; c < g.cols; ++c) {
          const int x0 = std::max(0, c * spec.stride - pad);
          const int x1 = std::min(W, (c + 1) * spec.stride + pad);
          const double n = static_cast<double>(x1 - x0) * (y1 - y0);
          const double mean = sum_i.sum(x0, y0, x1, y1) / n;
          const double var = std::max(0.0, sum_sq.sum(x0, y0, x1, y1) / n - mean * mean);
          const double stats[kBlockStats] = {mean, sum_gx.sum(x0, y0, x1, y1) / n,
                                             sum_gy.sum(x0, y0, x1, y1) / n, std::sqrt(var)};
          for (int k = 0; k < kBlockStats; ++k) {
            const int ch = ring * kBlockStats + k;
            if (ch < spec.channels) g.at(ch, r, c) = static_cast<float>(stats[k]);
          }
        }
      }
    }
    p.layers.push_back(std::move(g));
  }
  return p;
}

// ---- precomputed tensor file ----
//
// Little-endian: "SLFT", u32 version, u32 layer count, then per layer
// (i32 layer id, u32 channels, u32 rows, u32 cols), then each layer's
// channels*rows*cols float32 values, row-major, in header order.

inline constexpr char kTensorMagic[4] = {'S', 'L', 'F', 'T'};
inline constexpr std::uint32_t kTensorVersion = 1;

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IntegrityError(std::string("truncated file reading ") + what);
  return v;
}

inline std::string shape_string(int id, std::uint32_t c, std::uint32_t r, std::uint32_t w) {
  std::ostringstream os;
  os << "layer " << id << " [" << c << "x" << r << "x" << w << "]";
  return os.str();
}

}  // namespace detail

inline void write_feature_tensor(const std::string& path, const FeaturePyramid& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open feature tensor for writing: " + path);
  os.write(kTensorMagic, 4);
  detail::put<std::uint32_t>(os, kTensorVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.layers.size()));
  for (const auto& g : p.layers) {
    detail::put<std::int32_t>(os, g.layer_id);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(g.channels));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(g.rows));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(g.cols));
  }
  for (const auto& g : p.layers)
    os.write(reinterpret_cast<const char*>(g.data.data()), static_cast<std::streamsize>(g.data.size() * sizeof(float)));
  if (!os) throw IoError("write failed: " + path);
}

// Loads a tensor file and checks it against the shapes implied by cfg and
// extent.
inline FeaturePyramid read_feature_tensor(const std::string& path, const PyramidConfig& cfg, Extent extent) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open feature tensor: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0)
    throw IntegrityError("not a feature tensor file: " + path);
  const auto version = detail::get<std::uint32_t>(is, "version");
  if (version != kTensorVersion) throw IntegrityError("unsupported feature tensor version " + std::to_string(version));
  const auto count = detail::get<std::uint32_t>(is, "layer count");
  if (count != cfg.layers.size()) {
    throw ShapeError("feature tensor has " + std::to_string(count) + " layers, expected " +
                     std::to_string(cfg.layers.size()));
  }
  FeaturePyramid p;
  p.extent = extent;
  std::ostringstream mismatch;
  for (std::uint32_t i = 0; i < count; ++i) {
    FeatureGrid g;
    g.layer_id = detail::get<std::int32_t>(is, "layer id");
    const auto c = detail::get<std::uint32_t>(is, "channels");
    const auto r = detail::get<std::uint32_t>(is, "rows");
    const auto w = detail::get<std::uint32_t>(is, "cols");
    const auto& spec = cfg.layers[i];
    const auto er = static_cast<std::uint32_t>(ceil_div(extent.height, spec.stride));
    const auto ec = static_cast<std::uint32_t>(ceil_div(extent.width, spec.stride));
    if (g.layer_id != spec.id || c != static_cast<std::uint32_t>(spec.channels) || r != er || w != ec) {
      mismatch << "expected " << detail::shape_string(spec.id, spec.channels, er, ec) << ", got "
               << detail::shape_string(g.layer_id, c, r, w) << "; ";
    }
    g.stride = spec.stride;
    g.channels = static_cast<int>(c);
    g.rows = static_cast<int>(r);
    g.cols = static_cast<int>(w);
    p.layers.push_back(std::move(g));
  }
  if (!mismatch.str().empty()) throw ShapeError("feature tensor shape mismatch: " + mismatch.str());
  for (auto& g : p.layers) {
    g.data.resize(static_cast<std::size_t>(g.channels) * g.rows * g.cols);
    if (!is.read(reinterpret_cast<char*>(g.data.data()), static_cast<std::streamsize>(g.data.size() * sizeof(float))))
      throw IntegrityError("truncated feature tensor data in " + path);
    for (float v : g.data)
      if (!std::isfinite(v)) throw IntegrityError("non-finite value in feature tensor " + path);
  }
  return p;
}

// Source of per-image feature pyramids.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual FeaturePyramid build(const Scene& scene, const Image& image) const = 0;
};

class SyntheticFeatures final : public FeatureProvider {
 public:
  explicit SyntheticFeatures(PyramidConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }
  FeaturePyramid build(const Scene&, const Image& image) const override { return synthetic_pyramid(image, cfg_); }

 private:
  PyramidConfig cfg_;
};

// Replays precomputed features stored as <directory>/<scene id>.slft.
class TensorFileFeatures final : public FeatureProvider {
 public:
  TensorFileFeatures(std::string directory, PyramidConfig cfg) : dir_(std::move(directory)), cfg_(std::move(cfg)) {
    cfg_.validate();
  }
  FeaturePyramid build(const Scene& scene, const Image&) const override {
    return read_feature_tensor(dir_ + "/" + scene.id + ".slft", cfg_, scene.extent);
  }

 private:
  std::string dir_;
  PyramidConfig cfg_;
};

// Pools the feature region under b (image pixels) on one layer to a fixed
// roi_size x roi_size grid. Regions narrower or shorter than roi_size cells
// are widened symmetrically to roi_size cells so small boxes pick up context;
// bins are sampled by bilinear interpolation between cell centers with edge
// replication. Output index: (channel * roi + row) * roi + col.
inline Eigen::VectorXd roi_pool(const FeaturePyramid& p, int layer_id, const BBox& b, int roi_size = 4) {
  const FeatureGrid& g = p.layer(layer_id);
  const double s = g.stride;
  double u0 = b.x / s, v0 = b.y / s, uw = b.w / s, vh = b.h / s;
  const double roi = roi_size;
  if (uw < roi) {
    u0 += 0.5 * (uw - roi);
    uw = roi;
  }
  if (vh < roi) {
    v0 += 0.5 * (vh - roi);
    vh = roi;
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(g.channels) * roi_size * roi_size);
  const int bins = roi_size;
  std::vector<int> r0(bins), r1(bins), c0(bins), c1(bins);
  std::vector<double> ry(bins), rx(bins);
  auto split = [](double f, int n, int& lo, int& hi, double& t) {
    // f is in cell-center coordinates: cell i is centered at i.
    const double fl = std::floor(f);
    t = f - fl;
    lo = std::clamp(static_cast<int>(fl), 0, n - 1);
    hi = std::clamp(static_cast<int>(fl) + 1, 0, n - 1);
  };
  for (int i = 0; i < bins; ++i) {
    split(v0 + (i + 0.5) * vh / bins - 0.5, g.rows, r0[i], r1[i], ry[i]);
    split(u0 + (i + 0.5) * uw / bins - 0.5, g.cols, c0[i], c1[i], rx[i]);
  }
  Eigen::Index k = 0;
  for (int c = 0; c < g.channels; ++c) {
    for (int i = 0; i < bins; ++i) {
      for (int j = 0; j < bins; ++j) {
        const double top = (1.0 - rx[j]) * g.at(c, r0[i], c0[j]) + rx[j] * g.at(c, r0[i], c1[j]);
        const double bot = (1.0 - rx[j]) * g.at(c, r1[i], c0[j]) + rx[j] * g.at(c, r1[i], c1[j]);
        out[k++] = (1.0 - ry[i]) * top + ry[i] * bot;
      }
    }
  }
  return out;
}

}  // namespace scaleloc
