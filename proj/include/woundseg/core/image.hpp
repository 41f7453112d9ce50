#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "woundseg/core/error.hpp"

namespace woundseg {

// Single-channel B-mode frame, row-major intensities in [0, 1].
class Frame {
 public:
  Frame() = default;

  Frame(int width, int height, float fill = 0.0f)
      : width_(width), height_(height) {
    check_dims(width, height);
    check_value(fill);
    values_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  Frame(int width, int height, std::vector<float> values)
      : width_(width), height_(height), values_(std::move(values)) {
    check_dims(width, height);
    if (values_.size() != static_cast<std::size_t>(width) * height)
      throw ShapeError("Frame: value count does not match dimensions");
    for (float v : values_) check_value(v);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  float at(int x, int y) const { return values_[index(x, y)]; }

  // Writes are clamped to [0, 1]; NaN is rejected.
  void set(int x, int y, float v) {
    if (std::isnan(v)) throw ValueError("Frame: NaN intensity");
    values_[index(x, y)] = std::clamp(v, 0.0f, 1.0f);
  }

  std::span<const float> values() const { return values_; }

  double mean() const {
    double s = 0.0;
    for (float v : values_) s += v;
    return values_.empty() ? 0.0 : s / static_cast<double>(values_.size());
  }

  friend bool operator==(const Frame&, const Frame&) = default;

 private:
  static void check_dims(int w, int h) {
    if (w <= 0 || h <= 0) throw ShapeError("Frame: dimensions must be positive");
  }
  static void check_value(float v) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
      throw ValueError("Frame: intensity outside [0,1]");
  }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> values_;
};

// Per-pixel wound labeling; true marks wound.
class BinaryMask {
 public:
  BinaryMask() = default;

  BinaryMask(int width, int height, bool fill = false) : width_(width), height_(height) {
    if (width <= 0 || height <= 0)
      throw ShapeError("BinaryMask: dimensions must be positive");
    bits_.assign(static_cast<std::size_t>(width) * height, fill ? 1 : 0);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return bits_.size(); }

  bool at(int x, int y) const { return bits_[index(x, y)] != 0; }
  void set(int x, int y, bool v) { bits_[index(x, y)] = v ? 1 : 0; }

  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set_index(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }

  // Bounds-checked read that treats outside pixels as background.
  bool get_or_false(int x, int y) const {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return false;
    return at(x, y);
  }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
  }
  bool any() const { return count() > 0; }

  bool same_shape(const BinaryMask& o) const {
    return width_ == o.width_ && height_ == o.height_;
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

inline void require_same_shape(const Frame& f, const BinaryMask& m, const char* what) {
  if (f.width() != m.width() || f.height() != m.height())
    throw ShapeError(std::string(what) + ": frame and mask dimensions differ");
}

inline void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": mask dimensions differ");
}

// Set algebra on equally sized masks.
inline BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "mask_and");
  BinaryMask out(a.width(), a.height());
  for (std::size_t i = 0; i < a.size(); ++i) out.set_index(i, a[i] && b[i]);
  return out;
}

inline BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "mask_or");
  BinaryMask out(a.width(), a.height());
  for (std::size_t i = 0; i < a.size(); ++i) out.set_index(i, a[i] || b[i]);
  return out;
}

inline BinaryMask mask_minus(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "mask_minus");
  BinaryMask out(a.width(), a.height());
  for (std::size_t i = 0; i < a.size(); ++i) out.set_index(i, a[i] && !b[i]);
  return out;
}

inline bool is_subset(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "is_subset");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] && !b[i]) return false;
  return true;
}

// 8-bit RGBA raster, row-major, 4 bytes per pixel.
struct RgbaImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RgbaImage() = default;
  RgbaImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 4, 0) {}

  std::uint8_t* at(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 4]; }
  const std::uint8_t* at(int x, int y) const {
    return &pixels[(static_cast<std::size_t>(y) * width + x) * 4];
  }

  friend bool operator==(const RgbaImage&, const RgbaImage&) = default;
};

// Bilinear resize of a frame onto a new grid (pixel-center aligned).
inline Frame resize_bilinear(const Frame& src, int width, int height) {
  if (src.width() == width && src.height() == height) return src;
  std::vector<float> out(static_cast<std::size_t>(width) * height);
  const double sx = static_cast<double>(src.width()) / width;
  const double sy = static_cast<double>(src.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double wx = fx - x0;
      const double v = (1 - wy) * ((1 - wx) * src.at(x0, y0) + wx * src.at(x1, y0)) +
                       wy * ((1 - wx) * src.at(x0, y1) + wx * src.at(x1, y1));
      out[static_cast<std::size_t>(y) * width + x] = std::clamp(static_cast<float>(v), 0.0f, 1.0f);
    }
  }
  return Frame(width, height, std::move(out));
}

inline BinaryMask resize_nearest(const BinaryMask& src, int width, int height) {
  if (src.width() == width && src.height() == height) return src;
  BinaryMask out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(src.height() - 1, static_cast<int>((y + 0.5) * src.height() / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(src.width() - 1, static_cast<int>((x + 0.5) * src.width() / width));
      out.set(x, y, src.at(sx, sy));
    }
  }
  return out;
}

}  // namespace woundseg
