#pragma once

// Color-coded renderings: TP/FP/FN overlays of a prediction against ground
// truth, and the four wound regions.

#include <array>
#include <cmath>
#include <cstdint>

#include "woundseg/core/image.hpp"
#include "woundseg/metrics.hpp"
#include "woundseg/morphology.hpp"

namespace woundseg::viz {

struct Rgb {
  std::uint8_t r, g, b;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

inline constexpr Rgb kTruePositive{0, 255, 0};
inline constexpr Rgb kFalsePositive{255, 255, 0};
inline constexpr Rgb kFalseNegative{255, 0, 0};

inline constexpr std::array<Rgb, 4> kRegionColors{{
    {0, 0, 255},    // 0-50%
    {255, 165, 0},  // 50-75%
    {0, 255, 0},    // 75-100%
    {255, 0, 0},    // 100-120%
}};

enum class Category { tn = 0, tp, fp, fn };

inline Category categorize(bool pred, bool gt) {
  if (pred && gt) return Category::tp;
  if (pred) return Category::fp;
  if (gt) return Category::fn;
  return Category::tn;
}

// Overlay layer alone: category colors with alpha 255, transparent TN.
inline RgbaImage overlay_layer(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "overlay_layer");
  RgbaImage img(pred.width(), pred.height());
  for (int y = 0; y < pred.height(); ++y)
    for (int x = 0; x < pred.width(); ++x) {
      std::uint8_t* px = img.at(x, y);
      Rgb c{0, 0, 0};
      switch (categorize(pred.at(x, y), gt.at(x, y))) {
        case Category::tn:
          px[0] = px[1] = px[2] = px[3] = 0;
          continue;
        case Category::tp: c = kTruePositive; break;
        case Category::fp: c = kFalsePositive; break;
        case Category::fn: c = kFalseNegative; break;
      }
      px[0] = c.r;
      px[1] = c.g;
      px[2] = c.b;
      px[3] = 255;
    }
  return img;
}

inline std::uint8_t gray_level(float v) {
  return static_cast<std::uint8_t>(std::lround(static_cast<double>(v) * 255.0));
}

inline std::uint8_t blend(std::uint8_t base, std::uint8_t over, double alpha) {
  return static_cast<std::uint8_t>(std::lround((1.0 - alpha) * base + alpha * over));
}

// Alpha-blends an overlay layer onto the grayscale frame. The output is
// opaque; where the layer is transparent the frame shows through untinted.
inline RgbaImage composite(const Frame& frame, const RgbaImage& layer, double alpha) {
  if (frame.width() != layer.width || frame.height() != layer.height)
    throw ShapeError("composite: frame and layer dimensions differ");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValueError("composite: alpha must be in [0, 1]");
  RgbaImage out(frame.width(), frame.height());
  for (int y = 0; y < frame.height(); ++y)
    for (int x = 0; x < frame.width(); ++x) {
      const std::uint8_t g = gray_level(frame.at(x, y));
      const std::uint8_t* l = layer.at(x, y);
      std::uint8_t* o = out.at(x, y);
      if (l[3] == 0) {
        o[0] = o[1] = o[2] = g;
      } else {
        for (int k = 0; k < 3; ++k) o[k] = blend(g, l[k], alpha);
      }
      o[3] = 255;
    }
  return out;
}

inline RgbaImage render_overlay(const Frame& frame, const BinaryMask& pred, const BinaryMask& gt,
                                double alpha = 0.5) {
  require_same_shape(frame, pred, "render_overlay");
  require_same_shape(pred, gt, "render_overlay");
  return composite(frame, overlay_layer(pred, gt), alpha);
}

inline RgbaImage region_layer(const morphology::RegionSet& rs) {
  RgbaImage img(rs.wound.width(), rs.wound.height());
  for (int i = 0; i < 4; ++i) {
    const BinaryMask& m = rs.regions[static_cast<std::size_t>(i)];
    for (int y = 0; y < m.height(); ++y)
      for (int x = 0; x < m.width(); ++x)
        if (m.at(x, y)) {
          std::uint8_t* px = img.at(x, y);
          px[0] = kRegionColors[i].r;
          px[1] = kRegionColors[i].g;
          px[2] = kRegionColors[i].b;
          px[3] = 255;
        }
  }
  return img;
}

inline RgbaImage render_regions(const Frame& frame, const morphology::RegionSet& rs, double alpha = 0.5) {
  require_same_shape(frame, rs.wound, "render_regions");
  return composite(frame, region_layer(rs), alpha);
}

// Category of each pixel of a layer produced by overlay_layer.
inline metrics::ConfusionCounts count_layer_colors(const RgbaImage& layer) {
  metrics::ConfusionCounts c;
  for (int y = 0; y < layer.height; ++y)
    for (int x = 0; x < layer.width; ++x) {
      const std::uint8_t* px = layer.at(x, y);
      const Rgb rgb{px[0], px[1], px[2]};
      if (px[3] == 0) ++c.tn;
      else if (rgb == kTruePositive) ++c.tp;
      else if (rgb == kFalsePositive) ++c.fp;
      else if (rgb == kFalseNegative) ++c.fn;
    }
  return c;
}

}  // namespace woundseg::viz
