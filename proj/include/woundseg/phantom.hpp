#pragma once

// Synthetic B-mode wound phantoms with exact ground-truth masks.
//
// Synthesis order: depth layers -> wound echogenicity multiplier -> bone line
// and acoustic shadow -> multiplicative unit-mean Rayleigh speckle (blurred
// with a radius-1 Gaussian) -> clamp to [0, 1].

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "woundseg/core/error.hpp"
#include "woundseg/core/image.hpp"
#include "woundseg/core/image_io.hpp"
#include "woundseg/core/manifest.hpp"
#include "woundseg/core/parallel.hpp"
#include "woundseg/core/random.hpp"

namespace woundseg::phantom {

inline constexpr int kHarmonicOrders[3] = {3, 4, 5};

struct WoundSpec {
  double cx = 0.0;
  double cy = 0.0;
  double a = 10.0;  // horizontal semi-axis, px
  double b = 6.0;   // vertical semi-axis, px
  // Peak boundary radius modulation as a fraction of the radius.
  double perturbation = 0.0;
  std::array<double, 3> harmonic_weights{0.5, 0.3, 0.2};
  std::array<double, 3> harmonic_phases{0.0, 0.0, 0.0};
  double center_darkening = 0.3;  // multiplier at the wound center, in [0, 1]
  double rim_brightening = 1.6;   // multiplier at the boundary, >= 1
  // Width (in normalized radius units) over which the bright rim decays back
  // to the background outside the boundary.
  double halo_width = 0.5;
};

struct BoneSpec {
  int depth_row = 0;
  int thickness = 3;
  double brightness = 0.95;
  double shadow_attenuation = 0.3;  // multiplier for rows beneath the bone
};

struct Layer {
  int row_begin = 0;  // inclusive
  int row_end = 0;    // exclusive
  double intensity = 0.5;
};

struct PhantomSpec {
  int width = 96;
  int height = 96;
  std::optional<WoundSpec> wound;
  std::optional<BoneSpec> bone;
  double speckle_sigma = 0.3;
  double background = 0.45;  // rows not covered by any layer
  std::vector<Layer> layers;
};

struct PhantomSample {
  Frame frame;
  BinaryMask mask;
  PhantomSpec spec;
  std::uint64_t seed = 0;
};

inline void validate(const PhantomSpec& spec) {
  if (spec.width <= 0 || spec.height <= 0) throw ValueError("phantom: dimensions must be positive");
  if (spec.speckle_sigma < 0.0) throw ValueError("phantom: speckle sigma must be >= 0");
  if (const auto& w = spec.wound) {
    if (w->a <= 0.0 || w->b <= 0.0) throw ValueError("phantom: wound semi-axes must be positive");
    if (w->perturbation < 0.0 || w->perturbation >= 1.0)
      throw ValueError("phantom: perturbation must be in [0, 1)");
    if (w->center_darkening < 0.0 || w->center_darkening > 1.0)
      throw ValueError("phantom: center_darkening must be in [0, 1]");
    if (w->rim_brightening < 1.0) throw ValueError("phantom: rim_brightening must be >= 1");
    if (w->halo_width <= 0.0) throw ValueError("phantom: halo_width must be positive");
    const double ra = w->a * (1.0 + w->perturbation);
    const double rb = w->b * (1.0 + w->perturbation);
    if (w->cx - ra < 0.0 || w->cx + ra > spec.width - 1.0 || w->cy - rb < 0.0 ||
        w->cy + rb > spec.height - 1.0)
      throw ValueError("phantom: wound extends outside the image");
  }
  if (const auto& b = spec.bone) {
    if (b->thickness < 1) throw ValueError("phantom: bone thickness must be >= 1");
    if (b->brightness < 0.0 || b->brightness > 1.0)
      throw ValueError("phantom: bone brightness must be in [0, 1]");
    if (b->shadow_attenuation < 0.0 || b->shadow_attenuation > 1.0)
      throw ValueError("phantom: shadow attenuation must be in [0, 1]");
  }
}

// Normalized radial coordinate of (x, y): < 1 inside the boundary, 1 on it.
inline double normalized_radius(const WoundSpec& w, double x, double y) {
  const double dx = (x - w.cx) / w.a;
  const double dy = (y - w.cy) / w.b;
  const double r = std::hypot(dx, dy);
  if (w.perturbation == 0.0) return r;
  const double theta = std::atan2(dy, dx);
  double mod = 0.0;
  double norm = 0.0;
  for (int h = 0; h < 3; ++h) {
    mod += w.harmonic_weights[h] * std::cos(kHarmonicOrders[h] * theta + w.harmonic_phases[h]);
    norm += std::abs(w.harmonic_weights[h]);
  }
  if (norm > 0.0) mod /= norm;
  return r / (1.0 + w.perturbation * mod);
}

// Echogenicity multiplier: rises from center_darkening at the center to
// rim_brightening at the boundary (quadratic in radius), then decays linearly
// back to 1 over halo_width outside.
inline double wound_multiplier(const WoundSpec& w, double rho) {
  if (rho <= 1.0)
    return w.center_darkening + (w.rim_brightening - w.center_darkening) * rho * rho;
  const double t = std::max(0.0, 1.0 - (rho - 1.0) / w.halo_width);
  return 1.0 + (w.rim_brightening - 1.0) * t;
}

inline BinaryMask wound_mask(const PhantomSpec& spec) {
  BinaryMask mask(spec.width, spec.height);
  if (!spec.wound) return mask;
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x)
      mask.set(x, y, normalized_radius(*spec.wound, x, y) <= 1.0);
  return mask;
}

inline double layer_intensity(const PhantomSpec& spec, int row) {
  double v = spec.background;
  for (const auto& l : spec.layers)
    if (row >= l.row_begin && row < l.row_end) v = l.intensity;
  return v;
}

// Noise-free echogenicity map (everything but speckle), unclamped.
inline std::vector<double> clean_intensity(const PhantomSpec& spec) {
  const int w = spec.width;
  const int h = spec.height;
  std::vector<double> img(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    const double base = layer_intensity(spec, y);
    for (int x = 0; x < w; ++x) {
      double v = base;
      if (spec.wound) v *= wound_multiplier(*spec.wound, normalized_radius(*spec.wound, x, y));
      img[static_cast<std::size_t>(y) * w + x] = v;
    }
  }
  if (const auto& b = spec.bone) {
    const int line_end = std::min(h, b->depth_row + b->thickness);
    for (int y = std::max(0, b->depth_row); y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double& v = img[static_cast<std::size_t>(y) * w + x];
        v = y < line_end ? b->brightness : v * b->shadow_attenuation;
      }
  }
  return img;
}

// Unit-mean Rayleigh speckle field mixed with weight sigma, then smoothed by
// a separable [1 2 1]/4 kernel with edge replication. Both steps preserve the
// unit expectation.
inline std::vector<double> speckle_field(int w, int h, double sigma, std::uint64_t seed) {
  std::vector<double> s(static_cast<std::size_t>(w) * h, 1.0);
  if (sigma == 0.0) return s;
  Rng rng(seed);
  for (auto& v : s) v = std::max(0.0, 1.0 + sigma * (unit_mean_rayleigh(rng) - 1.0));
  std::vector<double> tmp(s.size());
  auto idx = [w](int x, int y) { return static_cast<std::size_t>(y) * w + x; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int xl = std::max(0, x - 1), xr = std::min(w - 1, x + 1);
      tmp[idx(x, y)] = 0.25 * s[idx(xl, y)] + 0.5 * s[idx(x, y)] + 0.25 * s[idx(xr, y)];
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int yu = std::max(0, y - 1), yd = std::min(h - 1, y + 1);
      s[idx(x, y)] = 0.25 * tmp[idx(x, yu)] + 0.5 * tmp[idx(x, y)] + 0.25 * tmp[idx(x, yd)];
    }
  return s;
}

inline PhantomSample generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  validate(spec);
  const auto clean = clean_intensity(spec);
  const auto speckle = speckle_field(spec.width, spec.height, spec.speckle_sigma, seed);
  std::vector<float> values(clean.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] = static_cast<float>(std::clamp(clean[i] * speckle[i], 0.0, 1.0));
  return {Frame(spec.width, spec.height, std::move(values)), wound_mask(spec), spec, seed};
}

// Default depth layering: bright skin, darker subcutis, mid-gray muscle.
inline std::vector<Layer> default_layers(int height) {
  const int skin = std::max(1, height / 12);
  const int subcutis = std::max(skin + 1, height * 2 / 5);
  return {{0, skin, 0.60}, {skin, subcutis, 0.40}, {subcutis, height, 0.50}};
}

// ---- datasets ----------------------------------------------------------------

template <class T>
struct Range {
  T lo{};
  T hi{};
};

struct DatasetSpec {
  int width = 96;
  int height = 96;
  int n_patients = 20;
  int scans_per_patient = 1;
  int frames_per_scan = 10;
  double speckle_sigma = 0.3;

  // Per-patient draws.
  Range<double> semi_axis_a{12.0, 22.0};
  Range<double> semi_axis_b{7.0, 13.0};
  Range<double> perturbation{0.0, 0.15};
  Range<double> center_darkening{0.2, 0.5};
  Range<double> rim_brightening{1.4, 1.8};
  double halo_width = 0.5;
  double bone_probability = 0.3;
  Range<double> bone_depth_fraction{0.75, 0.9};
  double bone_shadow_attenuation = 0.3;
  double wound_probability = 1.0;
  Range<double> layer_jitter{-0.05, 0.05};  // added to default layer intensities

  // Per-frame jitter around the patient geometry (sweep correlation).
  double jitter_center_px = 2.0;
  double jitter_axis_fraction = 0.05;

  std::array<double, 3> split_fractions{0.8, 0.2, 0.0};
  std::uint64_t seed = 1;
};

struct PatientGeometry {
  std::optional<WoundSpec> wound;
  std::optional<BoneSpec> bone;
  std::vector<Layer> layers;
};

inline PatientGeometry draw_patient(const DatasetSpec& ds, Rng& rng) {
  PatientGeometry g;
  g.layers = default_layers(ds.height);
  for (auto& l : g.layers) l.intensity += uniform(rng, ds.layer_jitter.lo, ds.layer_jitter.hi);
  const bool has_wound = uniform01(rng) < ds.wound_probability;
  WoundSpec w;
  w.a = uniform(rng, ds.semi_axis_a.lo, ds.semi_axis_a.hi);
  w.b = uniform(rng, ds.semi_axis_b.lo, ds.semi_axis_b.hi);
  w.perturbation = uniform(rng, ds.perturbation.lo, ds.perturbation.hi);
  for (int h = 0; h < 3; ++h) {
    w.harmonic_weights[h] = uniform(rng, 0.2, 1.0);
    w.harmonic_phases[h] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }
  w.center_darkening = uniform(rng, ds.center_darkening.lo, ds.center_darkening.hi);
  w.rim_brightening = uniform(rng, ds.rim_brightening.lo, ds.rim_brightening.hi);
  w.halo_width = ds.halo_width;
  // Leave room for the largest per-frame jitter.
  const double grow = (1.0 + w.perturbation) * (1.0 + ds.jitter_axis_fraction);
  const double mx = w.a * grow + ds.jitter_center_px + 1.0;
  const double my = w.b * grow + ds.jitter_center_px + 1.0;
  const double y_hi = std::min(ds.height - 1.0 - my, ds.height * 0.6);
  if (2.0 * mx >= ds.width - 1.0 || my >= y_hi)
    throw ValueError("phantom dataset: wound size range does not fit the image");
  w.cx = uniform(rng, mx, ds.width - 1.0 - mx);
  w.cy = uniform(rng, my, y_hi);
  if (has_wound) g.wound = w;
  if (uniform01(rng) < ds.bone_probability) {
    BoneSpec b;
    b.depth_row = static_cast<int>(
        std::lround(ds.height * uniform(rng, ds.bone_depth_fraction.lo, ds.bone_depth_fraction.hi)));
    b.shadow_attenuation = ds.bone_shadow_attenuation;
    g.bone = b;
  }
  return g;
}

inline PhantomSpec jitter_frame(const DatasetSpec& ds, const PatientGeometry& g, Rng& rng) {
  PhantomSpec spec;
  spec.width = ds.width;
  spec.height = ds.height;
  spec.speckle_sigma = ds.speckle_sigma;
  spec.layers = g.layers;
  spec.bone = g.bone;
  const double dx = uniform(rng, -1.0, 1.0) * ds.jitter_center_px;
  const double dy = uniform(rng, -1.0, 1.0) * ds.jitter_center_px;
  const double sa = 1.0 + uniform(rng, -1.0, 1.0) * ds.jitter_axis_fraction;
  const double sb = 1.0 + uniform(rng, -1.0, 1.0) * ds.jitter_axis_fraction;
  if (g.wound) {
    WoundSpec w = *g.wound;
    w.cx += dx;
    w.cy += dy;
    w.a *= sa;
    w.b *= sb;
    spec.wound = w;
  }
  return spec;
}

struct GeneratedDataset {
  DatasetManifest manifest;
  std::filesystem::path manifest_path;
};

// Writes images/, masks/ and manifest.json under out_dir. Frames are stored
// as 16-bit PNG, masks as 8-bit 0/255 PNG; manifest paths are relative.
inline GeneratedDataset generate_dataset(const DatasetSpec& ds, const std::filesystem::path& out_dir,
                                         int threads = 1) {
  if (ds.n_patients < 0 || ds.scans_per_patient < 0 || ds.frames_per_scan < 0)
    throw ValueError("phantom dataset: counts must be non-negative");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");

  struct Job {
    PhantomSpec spec;
    std::uint64_t seed;
    std::string stem;
  };
  std::vector<Job> jobs;
  DatasetManifest manifest;
  char buf[64];
  for (int p = 0; p < ds.n_patients; ++p) {
    Rng prng(derive_seed(ds.seed, static_cast<std::uint64_t>(p)));
    const PatientGeometry geometry = draw_patient(ds, prng);
    Patient patient;
    std::snprintf(buf, sizeof buf, "P%03d", p);
    patient.id = buf;
    for (int s = 0; s < ds.scans_per_patient; ++s) {
      Scan scan;
      std::snprintf(buf, sizeof buf, "S%02d", s);
      scan.id = buf;
      for (int f = 0; f < ds.frames_per_scan; ++f) {
        const std::uint64_t frame_key =
            (static_cast<std::uint64_t>(p) << 32) | (static_cast<std::uint64_t>(s) << 16) |
            static_cast<std::uint64_t>(f);
        Rng frng(derive_seed(ds.seed ^ 0x5bd1e995ULL, frame_key));
        Job job{jitter_frame(ds, geometry, frng), frng(), ""};
        std::snprintf(buf, sizeof buf, "%s_%s_%03d", patient.id.c_str(), scan.id.c_str(), f);
        job.stem = buf;
        scan.frames.push_back({"images/" + job.stem + ".png", "masks/" + job.stem + ".png"});
        jobs.push_back(std::move(job));
      }
      patient.scans.push_back(std::move(scan));
    }
    manifest.patients.push_back(std::move(patient));
  }

  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    const auto sample = generate_phantom(jobs[i].spec, jobs[i].seed);
    save_frame_png(out_dir / "images" / (jobs[i].stem + ".png"), sample.frame);
    save_mask_png(out_dir / "masks" / (jobs[i].stem + ".png"), sample.mask);
  });

  if (!manifest.patients.empty())
    manifest = partition_by_patient(std::move(manifest), ds.split_fractions, derive_seed(ds.seed, ~0ULL));
  manifest.base_dir = out_dir;
  const fs::path manifest_path = out_dir / "manifest.json";
  save_manifest(manifest_path, manifest);
  return {std::move(manifest), manifest_path};
}

}  // namespace woundseg::phantom
