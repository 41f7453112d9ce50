#pragma once

// Joint (frame, mask) training augmentation and input normalization.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "woundseg/autodiff/tensor.hpp"
#include "woundseg/core/error.hpp"
#include "woundseg/core/image.hpp"
#include "woundseg/core/random.hpp"

namespace woundseg::augment {

struct AugmentConfig {
  bool brightness_enabled = true;
  double brightness_min = -0.1;  // additive
  double brightness_max = 0.1;

  bool noise_enabled = true;
  double noise_sigma_min = 0.0;  // Gaussian, additive
  double noise_sigma_max = 0.05;

  // Grayscale stand-in for saturation: contrast scaling about the frame mean.
  bool contrast_enabled = true;
  double contrast_min = 0.8;
  double contrast_max = 1.2;

  bool rotation_enabled = true;
  double rotation_min_deg = -15.0;
  double rotation_max_deg = 15.0;

  bool flip_enabled = true;
  double flip_probability = 0.5;

  static AugmentConfig disabled() {
    AugmentConfig c;
    c.brightness_enabled = c.noise_enabled = c.contrast_enabled = false;
    c.rotation_enabled = c.flip_enabled = false;
    return c;
  }
};

inline void validate(const AugmentConfig& c) {
  auto ordered = [](double lo, double hi, const char* what) {
    if (!(lo <= hi)) throw ValueError(std::string("augment: ") + what + " range is not ordered");
  };
  ordered(c.brightness_min, c.brightness_max, "brightness");
  ordered(c.noise_sigma_min, c.noise_sigma_max, "noise sigma");
  ordered(c.contrast_min, c.contrast_max, "contrast");
  ordered(c.rotation_min_deg, c.rotation_max_deg, "rotation");
  if (c.noise_sigma_min < 0.0) throw ValueError("augment: noise sigma must be >= 0");
  if (c.contrast_min < 0.0) throw ValueError("augment: contrast factor must be >= 0");
  if (c.flip_probability < 0.0 || c.flip_probability > 1.0)
    throw ValueError("augment: flip probability must be in [0, 1]");
}

struct Pair {
  Frame frame;
  BinaryMask mask;
};

inline Pair flip_lr(const Frame& frame, const BinaryMask& mask) {
  require_same_shape(frame, mask, "flip_lr");
  const int w = frame.width(), h = frame.height();
  std::vector<float> v(frame.size());
  BinaryMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      v[static_cast<std::size_t>(y) * w + x] = frame.at(w - 1 - x, y);
      m.set(x, y, mask.at(w - 1 - x, y));
    }
  return {Frame(w, h, std::move(v)), std::move(m)};
}

// Rotation about the image center by `degrees` (counter-clockwise in image
// coordinates with y down). Inverse mapping: bilinear for the frame,
// nearest-neighbor for the mask, zero outside the source.
inline Pair rotate(const Frame& frame, const BinaryMask& mask, double degrees) {
  require_same_shape(frame, mask, "rotate");
  const int w = frame.width(), h = frame.height();
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  auto sample = [&](int x, int y) -> double {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
    return frame.at(x, y);
  };
  std::vector<float> v(frame.size());
  BinaryMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      const double val = (1 - fy) * ((1 - fx) * sample(x0, y0) + fx * sample(x0 + 1, y0)) +
                         fy * ((1 - fx) * sample(x0, y0 + 1) + fx * sample(x0 + 1, y0 + 1));
      v[static_cast<std::size_t>(y) * w + x] = std::clamp(static_cast<float>(val), 0.0f, 1.0f);
      const int nx = static_cast<int>(std::floor(sx + 0.5));
      const int ny = static_cast<int>(std::floor(sy + 0.5));
      m.set(x, y, mask.get_or_false(nx, ny));
    }
  return {Frame(w, h, std::move(v)), std::move(m)};
}

// Random draws for one augmentation, in a fixed order.
struct Draw {
  bool flip = false;
  double rotation_deg = 0.0;
  double brightness = 0.0;
  double contrast = 1.0;
  double noise_sigma = 0.0;
};

inline Draw draw(const AugmentConfig& c, Rng& rng) {
  Draw d;
  // Every parameter consumes its draws even when disabled, so toggling one
  // transform leaves the others' values unchanged.
  const double flip_u = uniform01(rng);
  const double rot = uniform(rng, c.rotation_min_deg, c.rotation_max_deg);
  const double bright = uniform(rng, c.brightness_min, c.brightness_max);
  const double contrast = uniform(rng, c.contrast_min, c.contrast_max);
  const double sigma = uniform(rng, c.noise_sigma_min, c.noise_sigma_max);
  if (c.flip_enabled) d.flip = flip_u < c.flip_probability;
  if (c.rotation_enabled) d.rotation_deg = rot;
  if (c.brightness_enabled) d.brightness = bright;
  if (c.contrast_enabled) d.contrast = contrast;
  if (c.noise_enabled) d.noise_sigma = sigma;
  return d;
}

// Geometric transforms first (both images), then contrast, brightness and
// noise on the frame only; the result is clamped to [0, 1].
inline Pair apply(const Frame& frame, const BinaryMask& mask, const Draw& d, Rng& noise_rng) {
  require_same_shape(frame, mask, "augment");
  Pair p{frame, mask};
  if (d.rotation_deg != 0.0) p = rotate(p.frame, p.mask, d.rotation_deg);
  if (d.flip) p = flip_lr(p.frame, p.mask);
  if (d.brightness == 0.0 && d.contrast == 1.0 && d.noise_sigma == 0.0) return p;
  const double mu = p.frame.mean();
  std::vector<float> v(p.frame.values().begin(), p.frame.values().end());
  for (auto& x : v) {
    double y = (x - mu) * d.contrast + mu + d.brightness;
    if (d.noise_sigma > 0.0) y += d.noise_sigma * standard_normal(noise_rng);
    x = static_cast<float>(std::clamp(y, 0.0, 1.0));
  }
  p.frame = Frame(p.frame.width(), p.frame.height(), std::move(v));
  return p;
}

inline Pair augment_pair(const Frame& frame, const BinaryMask& mask, const AugmentConfig& config,
                         std::uint64_t seed) {
  require_same_shape(frame, mask, "augment_pair");
  validate(config);
  Rng rng(seed);
  const Draw d = draw(config, rng);
  return apply(frame, mask, d, rng);
}

// ---- normalization ------------------------------------------------------------------

enum class NormMode { dataset_stats, imagenet_3ch };

inline const char* to_string(NormMode m) {
  return m == NormMode::dataset_stats ? "dataset_stats" : "imagenet_3ch";
}

inline NormMode parse_norm_mode(const std::string& s) {
  if (s == "dataset_stats") return NormMode::dataset_stats;
  if (s == "imagenet_3ch") return NormMode::imagenet_3ch;
  throw ValueError("unknown normalization mode '" + s + "'");
}

inline constexpr std::array<double, 3> kImageNetMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageNetStd{0.229, 0.224, 0.225};

struct NormStats {
  double mean = 0.0;
  double std = 1.0;
};

// Running (Welford) mean and population std over every pixel of the frames.
class RunningStats {
 public:
  void add(const Frame& f) {
    for (float v : f.values()) {
      ++n_;
      const double d = v - mean_;
      mean_ += d / static_cast<double>(n_);
      m2_ += d * (v - mean_);
    }
  }
  NormStats stats() const {
    return {mean_, n_ ? std::sqrt(m2_ / static_cast<double>(n_)) : 0.0};
  }

 private:
  std::uint64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

inline int channels_for(NormMode mode) { return mode == NormMode::imagenet_3ch ? 3 : 1; }

// Writes the normalized frame as C planes into `out` (size C*H*W).
template <class T>
void normalize_into(const Frame& frame, NormMode mode, const NormStats& stats, std::span<T> out) {
  const std::size_t n = frame.size();
  if (mode == NormMode::dataset_stats) {
    if (!(stats.std > 0.0)) throw ValueError("normalize: standard deviation is zero");
    if (out.size() != n) throw ShapeError("normalize: output size mismatch");
    for (std::size_t i = 0; i < n; ++i)
      out[i] = static_cast<T>((frame.values()[i] - stats.mean) / stats.std);
    return;
  }
  if (out.size() != 3 * n) throw ShapeError("normalize: output size mismatch");
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < n; ++i)
      out[c * n + i] = static_cast<T>((frame.values()[i] - kImageNetMean[c]) / kImageNetStd[c]);
}

// [1, C, H, W] tensor, C = 1 for dataset_stats, 3 for imagenet_3ch.
template <class T = float>
ad::Tensor<T> normalize(const Frame& frame, NormMode mode, const NormStats& stats = {}) {
  const int c = channels_for(mode);
  std::vector<T> values(static_cast<std::size_t>(c) * frame.size());
  normalize_into<T>(frame, mode, stats, values);
  return ad::Tensor<T>::from({1, c, frame.height(), frame.width()}, std::move(values));
}

}  // namespace woundseg::augment
