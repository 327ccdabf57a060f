#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scaleloc/error.hpp"
#include "scaleloc/geometry.hpp"
#include "scaleloc/rng.hpp"

namespace scaleloc {

struct GroundTruth {
  BBox box;
  std::uint64_t appearance_seed = 0;
  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct Scene {
  std::string id;
  Extent extent;
  std::vector<GroundTruth> objects;
  std::uint64_t seed = 0;
  friend bool operator==(const Scene&, const Scene&) = default;
};

// Grayscale image, row-major, intensities nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

struct GenConfig {
  int scenes = 100;
  Extent extent{640, 480};
  int objects_min = 1;
  int objects_max = 6;
  // Heights are log-normal, truncated to [height_min, height_max] by rejection.
  double height_median = 48.0;
  double height_sigma_log = 0.6;
  double height_min = 24.0;
  double height_max = 320.0;
  double aspect = 0.41;
  double aspect_jitter = 0.05;

  // Rendering.
  double background_level = 0.35;
  double contrast = 0.2;
  double texture_amp = 0.06;
  double noise_amp = 0.1;
  double smooth_amp = 0.08;
  int smooth_cell = 40;
  int clutter_min = 4;
  int clutter_max = 12;
  double clutter_range = 0.3;

  void validate() const {
    if (scenes <= 0) throw ConfigError("scenegen.scenes must be positive");
    if (extent.width <= 0 || extent.height <= 0) throw ConfigError("scenegen extent must be positive");
    if (objects_min < 0 || objects_max < objects_min || objects_max <= 0)
      throw ConfigError("scenegen objects range must satisfy 0 <= min <= max, max > 0");
    if (!(height_median > 0.0) || !(height_sigma_log >= 0.0))
      throw ConfigError("scenegen height law parameters must be positive");
    if (!(height_min > 0.0) || !(height_max >= height_min) || height_max > extent.height)
      throw ConfigError("scenegen height bounds must satisfy 0 < min <= max <= image height");
    if (!(aspect > 0.0) || aspect_jitter < 0.0 || aspect - aspect_jitter < 0.31 - 1e-12 ||
        aspect + aspect_jitter > 0.51 + 1e-12)
      throw ConfigError("scenegen aspect band must stay within [0.31, 0.51]");
    if (smooth_cell <= 0) throw ConfigError("scenegen.smooth_cell must be positive");
    if (clutter_min < 0 || clutter_max < clutter_min)
      throw ConfigError("scenegen clutter range invalid");
  }
};

namespace detail {

inline double sample_height(const GenConfig& cfg, Rng& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double h = cfg.height_median * std::exp(cfg.height_sigma_log * rng.normal());
    if (h >= cfg.height_min && h <= cfg.height_max) return h;
  }
  return std::clamp(cfg.height_median, cfg.height_min, cfg.height_max);
}

// Hash-based value in [-1, 1); stateless so rendering order does not matter.
inline double hash_unit(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return static_cast<double>(derive_seed(seed, a, b) >> 11) * 0x1.0p-52 - 1.0;
}

}  // namespace detail

// Draws one scene. Objects are placed fully inside the extent without
// overlapping each other; an object that cannot be placed after a bounded
// number of attempts is dropped (the first one always fits).
inline Scene sample_scene(const GenConfig& cfg, std::uint64_t scene_seed, std::string id) {
  Scene s;
  s.id = std::move(id);
  s.extent = cfg.extent;
  s.seed = scene_seed;
  Rng rng(scene_seed);
  const auto count = static_cast<int>(rng.uniform_int(cfg.objects_min, cfg.objects_max));
  for (int k = 0; k < count; ++k) {
    const double h = detail::sample_height(cfg, rng);
    const double ratio = cfg.aspect + cfg.aspect_jitter * (2.0 * rng.uniform() - 1.0);
    const double w = ratio * h;
    const std::uint64_t appearance = rng.next();
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double x = rng.uniform(0.0, cfg.extent.width - w);
      const double y = rng.uniform(0.0, cfg.extent.height - h);
      const BBox box(x, y, w, h);
      const bool overlaps = std::any_of(s.objects.begin(), s.objects.end(), [&](const GroundTruth& g) {
        return intersection_area(g.box, box) > 0.0;
      });
      if (!overlaps) {
        s.objects.push_back({box, appearance});
        break;
      }
    }
  }
  return s;
}

inline std::string scene_id(std::size_t index) {
  std::ostringstream os;
  os << "scene-" << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

// Pure function of (cfg, seed).
inline std::vector<Scene> sample_dataset(const GenConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<Scene> out;
  out.reserve(static_cast<std::size_t>(cfg.scenes));
  for (int i = 0; i < cfg.scenes; ++i) {
    out.push_back(sample_scene(cfg, derive_seed(seed, static_cast<std::uint64_t>(i)), scene_id(i)));
  }
  return out;
}

inline std::vector<BBox> boxes_of(const Scene& s) {
  std::vector<BBox> out;
  out.reserve(s.objects.size());
  for (const auto& g : s.objects) out.push_back(g.box);
  return out;
}

namespace detail {

template <class Inside>
void fill_shape(Image& img, double x0, double y0, double x1, double y1, Inside inside,
                const std::function<float(int, int)>& value) {
  const int ix0 = std::max(0, static_cast<int>(std::floor(x0)));
  const int iy0 = std::max(0, static_cast<int>(std::floor(y0)));
  const int ix1 = std::min(img.width, static_cast<int>(std::ceil(x1)));
  const int iy1 = std::min(img.height, static_cast<int>(std::ceil(y1)));
  for (int y = iy0; y < iy1; ++y) {
    for (int x = ix0; x < ix1; ++x) {
      if (inside(x + 0.5, y + 0.5)) img.at(x, y) = value(x, y);
    }
  }
}

inline void fill_rect(Image& img, double x0, double y0, double x1, double y1,
                      const std::function<float(int, int)>& value) {
  fill_shape(img, x0, y0, x1, y1,
             [&](double px, double py) { return px >= x0 && px < x1 && py >= y0 && py < y1; }, value);
}

inline void fill_ellipse(Image& img, double cx, double cy, double rx, double ry,
                         const std::function<float(int, int)>& value) {
  fill_shape(img, cx - rx, cy - ry, cx + rx, cy + ry,
             [&](double px, double py) {
               const double u = (px - cx) / rx, v = (py - cy) / ry;
               return u * u + v * v <= 1.0;
             },
             value);
}

}  // namespace detail

// Renders the figure for one ground truth: head, torso, two legs, with
// zero-mean stripe texture on top of background_level + contrast.
inline void draw_figure(Image& img, const GroundTruth& g, const GenConfig& cfg) {
  Rng rng(g.appearance_seed);
  const double period = rng.uniform(3.0, 9.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double base = cfg.background_level + cfg.contrast;
  const double amp = cfg.texture_amp;
  const BBox& b = g.box;
  auto texture = [=](int, int y) {
    return static_cast<float>(base + amp * std::sin(2.0 * std::numbers::pi * (y + 0.5) / period + phase));
  };
  const double cx = b.cx();
  detail::fill_ellipse(img, cx, b.y + 0.095 * b.h, 0.22 * b.w, 0.09 * b.h,
                       [=](int, int) { return static_cast<float>(base); });
  detail::fill_rect(img, cx - 0.42 * b.w, b.y + 0.18 * b.h, cx + 0.42 * b.w, b.y + 0.58 * b.h, texture);
  detail::fill_rect(img, cx - 0.38 * b.w, b.y + 0.58 * b.h, cx - 0.04 * b.w, b.y + b.h, texture);
  detail::fill_rect(img, cx + 0.04 * b.w, b.y + 0.58 * b.h, cx + 0.38 * b.w, b.y + b.h, texture);
}

// Structured clutter background: smooth value noise, blocky distractors and
// per-pixel noise, then the figures. Bit-identical across calls.
inline Image rasterize(const Scene& s, const GenConfig& cfg) {
  const int W = s.extent.width, H = s.extent.height;
  Image img(W, H);
  const int cell = cfg.smooth_cell;
  const int gw = W / cell + 2, gh = H / cell + 2;
  std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
  for (int j = 0; j < gh; ++j)
    for (int i = 0; i < gw; ++i)
      lattice[static_cast<std::size_t>(j) * gw + i] = detail::hash_unit(s.seed, 0x5100 + i, j);
  for (int y = 0; y < H; ++y) {
    const double fy = (y + 0.5) / cell;
    const int j = static_cast<int>(fy);
    const double ty = fy - j;
    for (int x = 0; x < W; ++x) {
      const double fx = (x + 0.5) / cell;
      const int i = static_cast<int>(fx);
      const double tx = fx - i;
      auto L = [&](int a, int b) { return lattice[static_cast<std::size_t>(b) * gw + a]; };
      const double v = (1 - ty) * ((1 - tx) * L(i, j) + tx * L(i + 1, j)) +
                       ty * ((1 - tx) * L(i, j + 1) + tx * L(i + 1, j + 1));
      img.at(x, y) = static_cast<float>(cfg.background_level + cfg.smooth_amp * v);
    }
  }

  Rng rng(derive_seed(s.seed, 0xc1u));
  const auto n_clutter = rng.uniform_int(cfg.clutter_min, cfg.clutter_max);
  for (std::int64_t k = 0; k < n_clutter; ++k) {
    const double cx = rng.uniform(0.0, W), cy = rng.uniform(0.0, H);
    const double cw = 8.0 * std::exp(rng.uniform(0.0, std::log(15.0)));
    const double ch = 8.0 * std::exp(rng.uniform(0.0, std::log(15.0)));
    const auto level = static_cast<float>(cfg.background_level + cfg.clutter_range * (2.0 * rng.uniform() - 1.0));
    auto flat = [=](int, int) { return level; };
    if (rng.uniform() < 0.5) {
      detail::fill_rect(img, cx - 0.5 * cw, cy - 0.5 * ch, cx + 0.5 * cw, cy + 0.5 * ch, flat);
    } else {
      detail::fill_ellipse(img, cx, cy, 0.5 * cw, 0.5 * ch, flat);
    }
  }

  for (const auto& g : s.objects) draw_figure(img, g, cfg);

  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      img.at(x, y) += static_cast<float>(
          cfg.noise_amp * detail::hash_unit(s.seed, static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(y) + 0x10000));
  return img;
}

// ---- dataset file: one JSON object per line ----

inline nlohmann::json scene_to_json(const Scene& s) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& g : s.objects) {
    objs.push_back({{"box", {g.box.x, g.box.y, g.box.w, g.box.h}}, {"appearance_seed", g.appearance_seed}});
  }
  return {{"id", s.id},
          {"extent", {s.extent.width, s.extent.height}},
          {"seed", s.seed},
          {"objects", std::move(objs)}};
}

inline Scene scene_from_json(const nlohmann::json& j) {
  Scene s;
  s.id = j.at("id").get<std::string>();
  const auto& e = j.at("extent");
  if (!e.is_array() || e.size() != 2) throw std::invalid_argument("extent must be [width, height]");
  s.extent = {e[0].get<int>(), e[1].get<int>()};
  if (s.extent.width <= 0 || s.extent.height <= 0) throw std::invalid_argument("extent must be positive");
  s.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& o : j.at("objects")) {
    const auto& b = o.at("box");
    if (!b.is_array() || b.size() != 4) throw std::invalid_argument("box must have 4 numbers");
    s.objects.push_back({BBox(b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()),
                         o.at("appearance_seed").get<std::uint64_t>()});
  }
  return s;
}

inline void write_dataset(std::ostream& os, const std::vector<Scene>& scenes) {
  for (const auto& s : scenes) os << scene_to_json(s).dump() << '\n';
}

inline std::vector<Scene> read_dataset(std::istream& is) {
  std::vector<Scene> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(scene_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return out;
}

inline void write_dataset(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open dataset for writing: " + path);
  write_dataset(os, scenes);
  if (!os) throw IoError("write failed: " + path);
}

inline std::vector<Scene> read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset: " + path);
  return read_dataset(is);
}

}  // namespace scaleloc
