#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace scaleloc {

// Axis-aligned box in image pixels: top-left corner plus width and height.
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;

  BBox() = default;
  BBox(double x_, double y_, double w_, double h_) : x(x_), y(y_), w(w_), h(h_) {
    if (!(w > 0.0) || !(h > 0.0) || !std::isfinite(x) || !std::isfinite(y) ||
        !std::isfinite(w) || !std::isfinite(h)) {
      throw std::invalid_argument("BBox requires finite coordinates and positive size");
    }
  }

  double x2() const { return x + w; }
  double y2() const { return y + h; }
  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double area() const { return w * h; }

  static BBox from_center(double cx, double cy, double w, double h) {
    return BBox(cx - 0.5 * w, cy - 0.5 * h, w, h);
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Extent {
  int width = 640;
  int height = 480;
  friend bool operator==(const Extent&, const Extent&) = default;
};

inline double intersection_area(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x, b.x);
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

inline double iou(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

// The eight coordinate-transformation actions. The two trigger actions live
// with the episode logic.
enum class TransformAction {
  MoveLeft,
  MoveRight,
  MoveUp,
  MoveDown,
  Taller,
  Shorter,
  Wider,
  Narrower,
};

inline constexpr std::array<TransformAction, 8> kAllTransforms = {
    TransformAction::MoveLeft, TransformAction::MoveRight, TransformAction::MoveUp,
    TransformAction::MoveDown, TransformAction::Taller,    TransformAction::Shorter,
    TransformAction::Wider,    TransformAction::Narrower};

inline std::string_view to_string(TransformAction a) {
  switch (a) {
    case TransformAction::MoveLeft: return "MoveLeft";
    case TransformAction::MoveRight: return "MoveRight";
    case TransformAction::MoveUp: return "MoveUp";
    case TransformAction::MoveDown: return "MoveDown";
    case TransformAction::Taller: return "Taller";
    case TransformAction::Shorter: return "Shorter";
    case TransformAction::Wider: return "Wider";
    case TransformAction::Narrower: return "Narrower";
  }
  return "?";
}

// Step magnitudes are relative to the current box so that near and far
// instances move at the same rate in box units.
struct StepConfig {
  double move_ratio = 0.1;
  double scale_factor = 1.2;
  // Reserved for additive aspect steps; the size actions are multiplicative.
  double aspect_ratio_step = 0.1;
  double min_side = 2.0;

  void validate() const {
    if (!(move_ratio > 0.0)) throw std::invalid_argument("move_ratio must be > 0");
    if (!(scale_factor > 1.0)) throw std::invalid_argument("scale_factor must be > 1");
    if (!(aspect_ratio_step > 0.0)) throw std::invalid_argument("aspect_ratio_step must be > 0");
    if (!(min_side > 0.0)) throw std::invalid_argument("min_side must be > 0");
  }
};

// Moves translate by a fraction of the current size; size changes hold the
// box center fixed. Outputs never go below min_side.
inline BBox apply_transform(const BBox& b, TransformAction a, const StepConfig& cfg) {
  const double w = std::max(b.w, cfg.min_side), h = std::max(b.h, cfg.min_side);
  if (w != b.w || h != b.h) {
    return apply_transform(BBox::from_center(b.cx(), b.cy(), w, h), a, cfg);
  }
  switch (a) {
    case TransformAction::MoveLeft: return BBox(b.x - cfg.move_ratio * w, b.y, w, h);
    case TransformAction::MoveRight: return BBox(b.x + cfg.move_ratio * w, b.y, w, h);
    case TransformAction::MoveUp: return BBox(b.x, b.y - cfg.move_ratio * h, w, h);
    case TransformAction::MoveDown: return BBox(b.x, b.y + cfg.move_ratio * h, w, h);
    case TransformAction::Taller:
      return BBox::from_center(b.cx(), b.cy(), w, h * cfg.scale_factor);
    case TransformAction::Shorter:
      return BBox::from_center(b.cx(), b.cy(), w, std::max(h / cfg.scale_factor, cfg.min_side));
    case TransformAction::Wider:
      return BBox::from_center(b.cx(), b.cy(), w * cfg.scale_factor, h);
    case TransformAction::Narrower:
      return BBox::from_center(b.cx(), b.cy(), std::max(w / cfg.scale_factor, cfg.min_side), h);
  }
  return b;
}

// Intersects b with the image rectangle. A box that falls off the image
// collapses to a min_side square at the nearest in-image center.
inline BBox clip(const BBox& b, Extent extent, double min_side = 2.0) {
  const double W = extent.width, H = extent.height;
  const double x1 = std::clamp(b.x, 0.0, W), x2 = std::clamp(b.x2(), 0.0, W);
  const double y1 = std::clamp(b.y, 0.0, H), y2 = std::clamp(b.y2(), 0.0, H);
  if (x2 - x1 > 0.0 && y2 - y1 > 0.0) return BBox(x1, y1, x2 - x1, y2 - y1);
  const double side_w = std::min(min_side, W), side_h = std::min(min_side, H);
  const double cx = std::clamp(b.cx(), 0.5 * side_w, W - 0.5 * side_w);
  const double cy = std::clamp(b.cy(), 0.5 * side_h, H - 0.5 * side_h);
  return BBox::from_center(cx, cy, side_w, side_h);
}

enum class RegressionMode { Raw, Normalized };

inline std::string_view to_string(RegressionMode m) {
  return m == RegressionMode::Raw ? "raw" : "normalized";
}

using Vec4 = std::array<double, 4>;

// Raw: componentwise target - anchor. Normalized: center offsets over the
// anchor size, log size ratios.
inline Vec4 encode_regression(const BBox& anchor, const BBox& target, RegressionMode mode) {
  if (mode == RegressionMode::Raw) {
    return {target.x - anchor.x, target.y - anchor.y, target.w - anchor.w, target.h - anchor.h};
  }
  return {(target.cx() - anchor.cx()) / anchor.w, (target.cy() - anchor.cy()) / anchor.h,
          std::log(target.w / anchor.w), std::log(target.h / anchor.h)};
}

// Inverse of encode_regression. Raw decodes that would produce a side below
// min_side are clamped.
inline BBox decode_regression(const BBox& anchor, const Vec4& d, RegressionMode mode,
                              double min_side = 1e-6) {
  if (mode == RegressionMode::Raw) {
    const double w = anchor.w + d[2], h = anchor.h + d[3];
    if (w >= min_side && h >= min_side) return BBox(anchor.x + d[0], anchor.y + d[1], w, h);
    const double cx = anchor.x + d[0] + 0.5 * w, cy = anchor.y + d[1] + 0.5 * h;
    return BBox::from_center(cx, cy, std::max(w, min_side), std::max(h, min_side));
  }
  const double cx = anchor.cx() + d[0] * anchor.w;
  const double cy = anchor.cy() + d[1] * anchor.h;
  // exp overflow guard for wild predictions
  const double w = anchor.w * std::exp(std::clamp(d[2], -20.0, 20.0));
  const double h = anchor.h * std::exp(std::clamp(d[3], -20.0, 20.0));
  return BBox::from_center(cx, cy, std::max(w, min_side), std::max(h, min_side));
}

}  // namespace scaleloc
