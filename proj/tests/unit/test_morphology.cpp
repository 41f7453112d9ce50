#include <gtest/gtest.h>

#include "support/fixtures.hpp"
#include "woundseg/morphology.hpp"

using namespace woundseg;
using namespace woundseg::morphology;
using testing_support::disk_mask;
using testing_support::random_mask;

TEST(Morphology, ErodeSinglePixel) {
  BinaryMask m(5, 5);
  m.set(2, 2, true);
  EXPECT_EQ(erode(m).count(), 0u);
}

TEST(Morphology, DilateSinglePixelIsCross) {
  BinaryMask m(5, 5);
  m.set(2, 2, true);
  const auto d = dilate(m);
  EXPECT_EQ(d.count(), 5u);
  for (auto [x, y] : std::vector<std::pair<int, int>>{{2, 2}, {1, 2}, {3, 2}, {2, 1}, {2, 3}}) EXPECT_TRUE(d.at(x, y));
  EXPECT_FALSE(d.at(1, 1));
}

TEST(Morphology, BorderCountsAsBackground) {
  const BinaryMask full(4, 3, true);
  const auto e = erode(full);
  EXPECT_EQ(e.count(), 2u);
  EXPECT_TRUE(e.at(1, 1));
  EXPECT_TRUE(e.at(2, 1));
  EXPECT_EQ(dilate(full), full);
}

TEST(Morphology, ExtensivityAndClosing) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto m = random_mask(12, 9, uniform01(rng), rng);
    EXPECT_TRUE(is_subset(erode(m), m));
    EXPECT_TRUE(is_subset(m, dilate(m)));
    // Closing only contains the original away from the border, where
    // off-image background erodes what dilation could not grow.
    BinaryMask inner(12, 9);
    for (int y = 1; y < 8; ++y)
      for (int x = 1; x < 11; ++x) inner.set(x, y, m.at(x, y));
    EXPECT_TRUE(is_subset(inner, erode(dilate(inner))));
  }
  const BinaryMask edge(3, 3, true);
  EXPECT_FALSE(is_subset(edge, erode(dilate(edge))));
}

TEST(Morphology, IteratedAreasAreMonotone) {
  Rng rng(2);
  const auto m = random_mask(20, 20, 0.6, rng);
  auto e = m, d = m;
  for (int i = 0; i < 10; ++i) {
    const auto e2 = erode(e), d2 = dilate(d);
    EXPECT_LE(e2.count(), e.count());
    EXPECT_GE(d2.count(), d.count());
    e = e2;
    d = d2;
  }
}

TEST(ScaleMask, IdentityAtOne) {
  const auto m = disk_mask(50, 50, 25, 25, 10);
  const auto s = scale_mask_to_fraction(m, 1.0);
  EXPECT_EQ(s.mask, m);
  EXPECT_EQ(s.achieved, 1.0);
}

TEST(ScaleMask, DiskRadiusTwenty) {
  const auto m = disk_mask(80, 80, 40, 40, 20);
  for (bool partial : {true, false})
    for (double f : {0.5, 1.2}) {
      const auto s = scale_mask_to_fraction(m, f, {partial});
      EXPECT_NEAR(s.achieved, f, 0.05) << f << " partial=" << partial;
      EXPECT_NEAR(static_cast<double>(s.mask.count()) / m.count(), s.achieved, 1e-15);
      if (f < 1) EXPECT_TRUE(is_subset(s.mask, m));
      else EXPECT_TRUE(is_subset(m, s.mask));
    }
}

TEST(ScaleMask, PartialLayerLandsWithinOnePixel) {
  Rng rng(3);
  for (double r : {6.0, 11.5, 17.0, 30.0}) {
    const auto m = disk_mask(90, 90, 45, 45, r);
    for (double f : {0.5, 0.75, 1.2}) {
      const auto s = scale_mask_to_fraction(m, f);
      EXPECT_LE(std::abs(static_cast<double>(s.mask.count()) - f * m.count()), 1.0) << r << " " << f;
    }
  }
}

TEST(ScaleMask, WholeStepPicksClosestIterate) {
  const auto m = disk_mask(60, 60, 30, 30, 15);
  const double a0 = static_cast<double>(m.count());
  std::vector<double> fracs{1.0};
  for (auto e = erode(m); e.any(); e = erode(e)) fracs.push_back(e.count() / a0);
  const double f = 0.6;
  double best = fracs[0];
  for (double x : fracs)
    if (std::abs(x - f) < std::abs(best - f)) best = x;
  EXPECT_DOUBLE_EQ(scale_mask_to_fraction(m, f, {false}).achieved, best);
}

TEST(ScaleMask, ErrorsAndExhaustion) {
  EXPECT_THROW(scale_mask_to_fraction(BinaryMask(4, 4), 0.5), ValueError);
  const auto m = disk_mask(20, 20, 10, 10, 4);
  EXPECT_THROW(scale_mask_to_fraction(m, 0.0), ValueError);
  EXPECT_THROW(scale_mask_to_fraction(m, -1.0), ValueError);
  const BinaryMask full(6, 6, true);
  const auto grown = scale_mask_to_fraction(full, 1.2);
  EXPECT_TRUE(grown.exhausted);
  EXPECT_EQ(grown.mask, full);
}

TEST(Regions, PartitionAndDisjointHalo) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const auto m = disk_mask(64, 64, uniform(rng, 24, 40), uniform(rng, 24, 40), uniform(rng, 6, 18));
    const auto rs = build_regions(m);
    const auto& [core, mid, rim, halo] = rs.regions;
    EXPECT_EQ(core.count() + mid.count() + rim.count(), m.count());
    EXPECT_EQ(mask_or(mask_or(core, mid), rim), m);
    EXPECT_EQ(mask_and(core, mid).count(), 0u);
    EXPECT_EQ(mask_and(mid, rim).count(), 0u);
    EXPECT_EQ(mask_and(core, rim).count(), 0u);
    EXPECT_EQ(mask_and(halo, m).count(), 0u);
  }
}

TEST(Regions, DiskFractionsNearTargets) {
  const auto m = disk_mask(80, 80, 40, 40, 20);
  const auto rs = build_regions(m);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(rs.achieved_outer[i], kRegionOuterFraction[i], 0.05);
  EXPECT_THROW(build_regions(BinaryMask(5, 5)), ValueError);
}

TEST(Intensity, UniformFrameGivesUnitRatios) {
  const auto m = disk_mask(64, 64, 32, 32, 14);
  const auto rep = intensity_ratios(Frame(64, 64, 0.37f), build_regions(m));
  for (const auto& r : rep.regions) {
    ASSERT_TRUE(r.ratio);
    EXPECT_NEAR(*r.ratio, 1.0, 1e-12);
  }
}

TEST(Intensity, WholeWoundAgainstItselfIsOne) {
  Rng rng(5);
  const auto f = testing_support::random_frame(40, 40, rng, 0.1, 1.0);
  const auto m = disk_mask(40, 40, 20, 20, 9);
  const auto w = masked_mean(f, m);
  ASSERT_TRUE(w);
  EXPECT_EQ(*w / *w, 1.0);
  EXPECT_FALSE(masked_mean(f, BinaryMask(40, 40)));
}

TEST(Intensity, RadialRampOrdersRegions) {
  const int n = 80;
  const double cx = 40, cy = 40, r = 20;
  const auto m = disk_mask(n, n, cx, cy, r);
  std::vector<float> v(static_cast<std::size_t>(n) * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) v[static_cast<std::size_t>(y) * n + x] = static_cast<float>(std::min(1.0, 0.1 + 0.02 * std::hypot(x - cx, y - cy)));
  const auto rep = intensity_ratios(Frame(n, n, v), build_regions(m));
  for (int i = 0; i < 3; ++i) EXPECT_LT(*rep.regions[i].ratio, *rep.regions[i + 1].ratio);
}

TEST(Intensity, EmptyRegionReportedAbsent) {
  BinaryMask m(9, 9);
  m.set(4, 4, true);  // erodes straight to empty
  const auto rs = build_regions(m);
  const auto rep = intensity_ratios(Frame(9, 9, 0.5f), rs);
  EXPECT_EQ(rep.regions[0].pixels + rep.regions[1].pixels + rep.regions[2].pixels, 1u);
  bool some_absent = false;
  for (const auto& r : rep.regions) some_absent |= !r.ratio.has_value();
  EXPECT_TRUE(some_absent);
}

TEST(Intensity, ScanAveragingAndSummary) {
  IntensityReport a, b;
  for (int i = 0; i < 4; ++i) {
    a.regions[i] = {kRegions[i], kRegionOuterFraction[i], 0.5, 10, 0.4, 0.8 + 0.1 * i};
    b.regions[i] = {kRegions[i], kRegionOuterFraction[i], 0.7, 10, 0.6, 1.0 + 0.1 * i};
  }
  b.regions[3].ratio.reset();
  b.regions[3].mean.reset();
  const std::vector<IntensityReport> frames{a, b};
  const auto s = average_scan("P000/S00", frames);
  EXPECT_NEAR(*s.ratio[0], 0.9, 1e-12);
  EXPECT_NEAR(*s.ratio[3], 1.1, 1e-12);
  EXPECT_NEAR(s.achieved_fraction[0], 0.6, 1e-12);
  auto s2 = s;
  s2.ratio[0] = 1.1;
  const std::vector<ScanIntensity> scans{s, s2};
  const auto sum = summarize_scans(scans);
  EXPECT_NEAR(sum[0].ratio->mean, 1.0, 1e-12);
  EXPECT_NEAR(sum[0].ratio->std, 0.1, 1e-12);
  EXPECT_EQ(sum[0].scans, 2u);
  EXPECT_EQ(intensity_csv_header(), "scan_id,region,target_fraction,achieved_fraction,mean_intensity,ratio\n");
}
