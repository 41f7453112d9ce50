#pragma once

// Binary erosion/dilation with a 3x3 cross, scaling a wound mask to a target
// area fraction, the four concentric wound regions, and the ratio of each
// region's mean intensity to the whole-wound mean.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "woundseg/core/error.hpp"
#include "woundseg/core/image.hpp"
#include "woundseg/metrics.hpp"

namespace woundseg::morphology {

// Pixels outside the image count as background.
inline BinaryMask erode(const BinaryMask& m) {
  BinaryMask out(m.width(), m.height());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      out.set(x, y, m.at(x, y) && m.get_or_false(x - 1, y) && m.get_or_false(x + 1, y) &&
                        m.get_or_false(x, y - 1) && m.get_or_false(x, y + 1));
  return out;
}

inline BinaryMask dilate(const BinaryMask& m) {
  BinaryMask out(m.width(), m.height());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      out.set(x, y, m.at(x, y) || m.get_or_false(x - 1, y) || m.get_or_false(x + 1, y) ||
                        m.get_or_false(x, y - 1) || m.get_or_false(x, y + 1));
  return out;
}

struct ScaleOptions {
  // Split the last unit step so the area lands within one pixel of the
  // target. With this off, the closest whole-step iterate is returned.
  bool partial_layer = true;
};

struct ScaledMask {
  BinaryMask mask;
  double target = 1.0;
  double achieved = 1.0;  // |mask| / |source|
  int steps = 0;          // whole erosion/dilation steps applied
  // The chain emptied (erosion) or stopped growing (dilation) before it
  // could bracket the target; `mask` is the best reachable result.
  bool exhausted = false;
};

namespace detail {

struct Centroid {
  double x = 0.0, y = 0.0;
};

inline Centroid centroid(const BinaryMask& m) {
  Centroid c;
  std::size_t n = 0;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m.at(x, y)) {
        c.x += x;
        c.y += y;
        ++n;
      }
  if (n) {
    c.x /= static_cast<double>(n);
    c.y /= static_cast<double>(n);
  }
  return c;
}

// `inner` plus the `count` pixels of `ring` nearest to `c` (ties by index).
inline BinaryMask add_nearest(const BinaryMask& inner, const BinaryMask& ring, std::size_t count,
                              const Centroid& c) {
  struct Cand {
    double d2;
    std::size_t index;
  };
  std::vector<Cand> cands;
  for (int y = 0; y < ring.height(); ++y)
    for (int x = 0; x < ring.width(); ++x)
      if (ring.at(x, y)) {
        const double dx = x - c.x, dy = y - c.y;
        cands.push_back({dx * dx + dy * dy, static_cast<std::size_t>(y) * ring.width() + x});
      }
  count = std::min(count, cands.size());
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(count), cands.end(),
                    [](const Cand& a, const Cand& b) { return a.d2 < b.d2 || (a.d2 == b.d2 && a.index < b.index); });
  BinaryMask out = inner;
  for (std::size_t i = 0; i < count; ++i) out.set_index(cands[i].index, true);
  return out;
}

}  // namespace detail

inline ScaledMask scale_mask_to_fraction(const BinaryMask& mask, double target, ScaleOptions opts = {}) {
  if (!(target > 0.0) || !std::isfinite(target)) throw ValueError("scale_mask_to_fraction: target must be > 0");
  const std::size_t area0 = mask.count();
  if (area0 == 0) throw ValueError("scale_mask_to_fraction: mask is empty");
  const double a0 = static_cast<double>(area0);
  ScaledMask result{mask, target, 1.0, 0, false};
  if (target == 1.0) return result;

  const bool shrink = target < 1.0;
  const auto goal = static_cast<std::size_t>(std::llround(target * a0));
  BinaryMask cur = mask;
  std::size_t cur_area = area0;
  int steps = 0;
  for (;;) {
    BinaryMask next = shrink ? erode(cur) : dilate(cur);
    const std::size_t next_area = next.count();
    const bool stalled = shrink ? next_area == 0 : next_area == cur_area;
    const bool crossed = shrink ? next_area <= goal : next_area >= goal;
    if (stalled && !(shrink && opts.partial_layer)) {
      result.mask = cur;
      result.achieved = static_cast<double>(cur_area) / a0;
      result.steps = steps;
      result.exhausted = true;
      return result;
    }
    if (crossed) {
      // Target lies between `cur` (step `steps`) and `next` (step steps+1).
      if (opts.partial_layer) {
        const detail::Centroid c = detail::centroid(mask);
        if (shrink) {
          const std::size_t keep = std::max<std::size_t>(goal, 1);
          const std::size_t extra = keep > next_area ? keep - next_area : 0;
          result.mask = detail::add_nearest(next, mask_minus(cur, next), extra, c);
          result.steps = steps + 1;
        } else {
          const std::size_t extra = goal > cur_area ? goal - cur_area : 0;
          result.mask = detail::add_nearest(cur, mask_minus(next, cur), extra, c);
          result.steps = steps;
        }
      } else {
        const double dc = std::abs(static_cast<double>(cur_area) / a0 - target);
        const double dn = std::abs(static_cast<double>(next_area) / a0 - target);
        const bool take_next = dn < dc && next_area > 0;
        result.mask = take_next ? next : cur;
        result.steps = take_next ? steps + 1 : steps;
      }
      result.achieved = static_cast<double>(result.mask.count()) / a0;
      return result;
    }
    cur = std::move(next);
    cur_area = next_area;
    ++steps;
  }
}

// ---- wound regions ----------------------------------------------------------------

enum class Region { core = 0, mid = 1, rim = 2, halo = 3 };

inline constexpr std::array<Region, 4> kRegions{Region::core, Region::mid, Region::rim, Region::halo};
// Outer boundary of each region as a fraction of the wound area.
inline constexpr std::array<double, 4> kRegionOuterFraction{0.50, 0.75, 1.00, 1.20};

inline const char* to_string(Region r) {
  switch (r) {
    case Region::core: return "0-50%";
    case Region::mid: return "50-75%";
    case Region::rim: return "75-100%";
    case Region::halo: return "100-120%";
  }
  return "?";
}

struct RegionSet {
  BinaryMask wound;
  std::array<BinaryMask, 4> regions;
  // Achieved outer-boundary fraction per region, alongside the targets in
  // kRegionOuterFraction.
  std::array<double, 4> achieved_outer{};

  const BinaryMask& operator[](Region r) const { return regions[static_cast<int>(r)]; }
};

inline RegionSet build_regions(const BinaryMask& wound, ScaleOptions opts = {}) {
  if (!wound.any()) throw ValueError("build_regions: wound mask is empty");
  const auto s50 = scale_mask_to_fraction(wound, 0.50, opts);
  const auto s75 = scale_mask_to_fraction(wound, 0.75, opts);
  const auto s120 = scale_mask_to_fraction(wound, 1.20, opts);
  if (!is_subset(s50.mask, s75.mask))
    throw Error("build_regions: 50% mask is not contained in the 75% mask");
  RegionSet rs;
  rs.wound = wound;
  rs.regions[0] = s50.mask;
  rs.regions[1] = mask_minus(s75.mask, s50.mask);
  rs.regions[2] = mask_minus(wound, s75.mask);
  rs.regions[3] = mask_minus(s120.mask, wound);
  rs.achieved_outer = {s50.achieved, s75.achieved, 1.0, s120.achieved};
  return rs;
}

struct RegionIntensity {
  Region region;
  double target_fraction;
  double achieved_fraction;
  std::size_t pixels = 0;
  std::optional<double> mean;   // absent for an empty region
  std::optional<double> ratio;  // mean / wound mean
};

struct IntensityReport {
  double wound_mean = 0.0;
  std::array<RegionIntensity, 4> regions{};
};

inline std::optional<double> masked_mean(const Frame& frame, const BinaryMask& m) {
  require_same_shape(frame, m, "masked_mean");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) {
      s += frame.values()[i];
      ++n;
    }
  if (!n) return std::nullopt;
  return s / static_cast<double>(n);
}

inline IntensityReport intensity_ratios(const Frame& frame, const RegionSet& rs) {
  require_same_shape(frame, rs.wound, "intensity_ratios");
  const auto wound_mean = masked_mean(frame, rs.wound);
  if (!wound_mean) throw ValueError("intensity_ratios: wound mask is empty");
  IntensityReport rep;
  rep.wound_mean = *wound_mean;
  for (Region r : kRegions) {
    const int i = static_cast<int>(r);
    RegionIntensity ri{r, kRegionOuterFraction[i], rs.achieved_outer[i], rs.regions[i].count(), {}, {}};
    ri.mean = masked_mean(frame, rs.regions[i]);
    if (ri.mean && rep.wound_mean > 0.0) ri.ratio = *ri.mean / rep.wound_mean;
    rep.regions[i] = ri;
  }
  return rep;
}

// Mean of the per-frame values of one scan (frames with an empty region are
// skipped for that region).
struct ScanIntensity {
  std::string scan_id;
  std::size_t frames = 0;
  std::array<std::optional<double>, 4> ratio{};
  std::array<std::optional<double>, 4> mean_intensity{};
  std::array<double, 4> achieved_fraction{};
};

inline ScanIntensity average_scan(const std::string& scan_id, std::span<const IntensityReport> frames) {
  ScanIntensity s;
  s.scan_id = scan_id;
  s.frames = frames.size();
  for (int i = 0; i < 4; ++i) {
    double rsum = 0.0, msum = 0.0, asum = 0.0;
    std::size_t n = 0;
    for (const auto& f : frames) {
      asum += f.regions[i].achieved_fraction;
      if (f.regions[i].ratio) {
        rsum += *f.regions[i].ratio;
        msum += *f.regions[i].mean;
        ++n;
      }
    }
    s.achieved_fraction[i] = frames.empty() ? 0.0 : asum / static_cast<double>(frames.size());
    if (n) {
      s.ratio[i] = rsum / static_cast<double>(n);
      s.mean_intensity[i] = msum / static_cast<double>(n);
    }
  }
  return s;
}

struct RegionSummary {
  Region region;
  std::optional<metrics::MeanStd> ratio;
  std::size_t scans = 0;
};

// Mean +- population std of the per-scan ratios, per region.
inline std::array<RegionSummary, 4> summarize_scans(std::span<const ScanIntensity> scans) {
  std::array<RegionSummary, 4> out{};
  for (int i = 0; i < 4; ++i) {
    std::vector<double> xs;
    for (const auto& s : scans)
      if (s.ratio[i]) xs.push_back(*s.ratio[i]);
    out[i].region = kRegions[i];
    out[i].scans = xs.size();
    if (!xs.empty()) out[i].ratio = metrics::mean_std(xs);
  }
  return out;
}

inline std::string intensity_csv_header() {
  return "scan_id,region,target_fraction,achieved_fraction,mean_intensity,ratio\n";
}

inline std::string intensity_csv_rows(const ScanIntensity& s) {
  std::string out;
  for (int i = 0; i < 4; ++i) {
    out += s.scan_id + "," + to_string(kRegions[i]) + "," + metrics::format_double(kRegionOuterFraction[i], 2) +
           "," + metrics::format_double(s.achieved_fraction[i], 4) + "," +
           (s.mean_intensity[i] ? metrics::format_double(*s.mean_intensity[i]) : std::string()) + "," +
           (s.ratio[i] ? metrics::format_double(*s.ratio[i]) : std::string()) + "\n";
  }
  return out;
}

// Region columns in order, one "US Intensity Ratio" row.
inline std::string intensity_summary_csv(const std::array<RegionSummary, 4>& summary) {
  std::string header = "row";
  std::string means = "ratio_mean", stds = "ratio_std", text = "summary", counts = "scans";
  for (const auto& r : summary) {
    header += std::string(",") + to_string(r.region);
    means += "," + (r.ratio ? metrics::format_double(r.ratio->mean) : std::string());
    stds += "," + (r.ratio ? metrics::format_double(r.ratio->std) : std::string());
    text += "," + (r.ratio ? metrics::format_mean_std(*r.ratio) : std::string());
    counts += "," + std::to_string(r.scans);
  }
  return header + "\n" + means + "\n" + stds + "\n" + text + "\n" + counts + "\n";
}

}  // namespace woundseg::morphology
