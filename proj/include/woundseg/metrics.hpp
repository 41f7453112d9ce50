#pragma once

// Confusion counts, Dice / precision / recall, and mean +- std aggregation.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "woundseg/core/error.hpp"
#include "woundseg/core/image.hpp"

namespace woundseg::metrics {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct FrameMetrics {
  double dice = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  ConfusionCounts counts;
};

inline ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "confusion");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i], g = gt[i];
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// Undefined ratios (0/0) are reported as 0, except when both masks are empty,
// which scores 1 on every metric.
inline FrameMetrics scores(const ConfusionCounts& c) {
  FrameMetrics m;
  m.counts = c;
  if (c.tp + c.fp + c.fn == 0) {
    m.dice = m.precision = m.recall = 1.0;
    return m;
  }
  const auto tp = static_cast<double>(c.tp);
  m.precision = c.tp + c.fp ? tp / static_cast<double>(c.tp + c.fp) : 0.0;
  m.recall = c.tp + c.fn ? tp / static_cast<double>(c.tp + c.fn) : 0.0;
  m.dice = 2.0 * tp / static_cast<double>(2 * c.tp + c.fp + c.fn);
  return m;
}

inline FrameMetrics evaluate(const BinaryMask& pred, const BinaryMask& gt) {
  return scores(confusion(pred, gt));
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

struct AggregateReport {
  MeanStd dice, precision, recall;
  std::size_t n = 0;
};

inline MeanStd mean_std(std::span<const double> xs) {
  if (xs.empty()) throw ValueError("mean_std: empty input");
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

inline AggregateReport aggregate(std::span<const FrameMetrics> frames) {
  if (frames.empty()) throw ValueError("aggregate: no frames to aggregate");
  std::vector<double> d, p, r;
  for (const auto& f : frames) {
    d.push_back(f.dice);
    p.push_back(f.precision);
    r.push_back(f.recall);
  }
  return {mean_std(d), mean_std(p), mean_std(r), frames.size()};
}

// "0.34 ± 0.31"
inline std::string format_mean_std(const MeanStd& m, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f ± %.*f", decimals, m.mean, decimals, m.std);
  return buf;
}

inline std::string format_double(double v, int decimals = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

// ---- CSV -------------------------------------------------------------------------

inline std::string per_frame_csv_header() { return "frame_id,tp,fp,fn,tn,dice,precision,recall\n"; }

inline std::string per_frame_csv_row(const std::string& frame_id, const FrameMetrics& m) {
  return frame_id + "," + std::to_string(m.counts.tp) + "," + std::to_string(m.counts.fp) + "," +
         std::to_string(m.counts.fn) + "," + std::to_string(m.counts.tn) + "," + format_double(m.dice) + "," +
         format_double(m.precision) + "," + format_double(m.recall) + "\n";
}

// One row per metric: metric,mean,std,n,summary.
inline std::string aggregate_csv(const AggregateReport& r) {
  std::string out = "metric,mean,std,n,summary\n";
  auto row = [&](const char* name, const MeanStd& m) {
    out += std::string(name) + "," + format_double(m.mean) + "," + format_double(m.std) + "," +
           std::to_string(r.n) + "," + format_mean_std(m) + "\n";
  };
  row("dice", r.dice);
  row("precision", r.precision);
  row("recall", r.recall);
  return out;
}

inline std::string format_table(const AggregateReport& r, const std::string& network = "U-Net") {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-12s %s\n", "Network", network.c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "%-12s %s\n", "Dice score", format_mean_std(r.dice).c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "%-12s %s\n", "Precision", format_mean_std(r.precision).c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "%-12s %s\n", "Recall", format_mean_std(r.recall).c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "%-12s %zu\n", "Frames", r.n);
  out += buf;
  return out;
}

}  // namespace woundseg::metrics
