#include <gtest/gtest.h>

#include "support/fixtures.hpp"
#include "woundseg/core/image_io.hpp"
#include "woundseg/metrics.hpp"
#include "woundseg/viz.hpp"

using namespace woundseg;
using namespace woundseg::viz;
using testing_support::disk_mask;
using testing_support::random_frame;
using testing_support::random_mask;

namespace {

Rgb rgb_at(const RgbaImage& img, int x, int y) {
  const auto* p = img.at(x, y);
  return {p[0], p[1], p[2]};
}

}  // namespace

TEST(Overlay, CategoryColors) {
  BinaryMask pred(2, 2), gt(2, 2);
  pred.set(0, 0, true);
  gt.set(0, 0, true);
  pred.set(1, 0, true);
  gt.set(0, 1, true);
  const auto layer = overlay_layer(pred, gt);
  EXPECT_EQ(rgb_at(layer, 0, 0), kTruePositive);
  EXPECT_EQ(rgb_at(layer, 1, 0), kFalsePositive);
  EXPECT_EQ(rgb_at(layer, 0, 1), kFalseNegative);
  EXPECT_EQ(layer.at(1, 1)[3], 0);
  EXPECT_EQ(layer.at(0, 0)[3], 255);
  EXPECT_EQ(kTruePositive, (Rgb{0, 255, 0}));
  EXPECT_EQ(kFalsePositive, (Rgb{255, 255, 0}));
  EXPECT_EQ(kFalseNegative, (Rgb{255, 0, 0}));
}

TEST(Overlay, ColorCountsEqualConfusion) {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto pred = random_mask(8, 8, uniform01(rng), rng), gt = random_mask(8, 8, uniform01(rng), rng);
    EXPECT_EQ(count_layer_colors(overlay_layer(pred, gt)), metrics::confusion(pred, gt));
  }
}

TEST(Overlay, CompositeBlendsOnlyTintedPixels) {
  Rng rng(2);
  const auto f = random_frame(16, 16, rng);
  const auto gt = disk_mask(16, 16, 8, 8, 4);
  const auto out = render_overlay(f, gt, gt);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const auto* p = out.at(x, y);
      const std::uint8_t g = gray_level(f.at(x, y));
      EXPECT_EQ(p[3], 255);
      if (gt.at(x, y)) {
        EXPECT_EQ(p[0], blend(g, 0, 0.5));
        EXPECT_EQ(p[1], blend(g, 255, 0.5));
      } else {
        EXPECT_EQ(p[0], g);
        EXPECT_EQ(p[1], g);
        EXPECT_EQ(p[2], g);
      }
    }
}

TEST(Overlay, EmptyPredictionPaintsWoundRed) {
  const auto gt = disk_mask(20, 20, 10, 10, 5);
  const auto layer = overlay_layer(BinaryMask(20, 20), gt);
  const auto c = count_layer_colors(layer);
  EXPECT_EQ(c.fn, gt.count());
  EXPECT_EQ(c.tp + c.fp, 0u);
  const auto full = render_overlay(Frame(20, 20, 0.0f), BinaryMask(20, 20), gt, 1.0);
  EXPECT_EQ(rgb_at(full, 10, 10), kFalseNegative);
}

TEST(Overlay, ShapeAndAlphaErrors) {
  EXPECT_THROW(render_overlay(Frame(4, 4), BinaryMask(4, 4), BinaryMask(4, 5)), ShapeError);
  EXPECT_THROW(render_overlay(Frame(4, 5), BinaryMask(4, 4), BinaryMask(4, 4)), ShapeError);
  EXPECT_THROW(render_overlay(Frame(4, 4), BinaryMask(4, 4), BinaryMask(4, 4), 1.5), ValueError);
}

TEST(Regions, ColorCountsEqualRegionAreas) {
  const auto m = disk_mask(64, 64, 32, 32, 16);
  const auto rs = morphology::build_regions(m);
  const auto layer = region_layer(rs);
  std::array<std::size_t, 4> counts{};
  std::size_t clear = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      if (layer.at(x, y)[3] == 0) {
        ++clear;
        continue;
      }
      for (int i = 0; i < 4; ++i)
        if (rgb_at(layer, x, y) == kRegionColors[i]) ++counts[i];
    }
  std::size_t tinted = 0;
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(counts[i], rs.regions[i].count());
    tinted += counts[i];
  }
  EXPECT_EQ(tinted + clear, 64u * 64u);
  EXPECT_EQ(kRegionColors[0], (Rgb{0, 0, 255}));
  EXPECT_EQ(kRegionColors[1], (Rgb{255, 165, 0}));
}

TEST(Regions, EmptyRegionSetRendersUntinted) {
  Rng rng(3);
  const auto f = random_frame(10, 10, rng);
  morphology::RegionSet rs;
  rs.wound = BinaryMask(10, 10);
  rs.regions.fill(BinaryMask(10, 10));
  const auto out = render_regions(f, rs);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) EXPECT_EQ(rgb_at(out, x, y), (Rgb{gray_level(f.at(x, y)), gray_level(f.at(x, y)), gray_level(f.at(x, y))}));
}

TEST(Render, PngBytesAreReproducible) {
  Rng rng(4);
  const auto f = random_frame(24, 24, rng);
  const auto p = random_mask(24, 24, 0.3, rng), g = random_mask(24, 24, 0.3, rng);
  const auto a = encode_rgba_png(render_overlay(f, p, g)), b = encode_rgba_png(render_overlay(f, p, g));
  EXPECT_EQ(a, b);
  ASSERT_GT(a.size(), 8u);
  EXPECT_EQ(a[1], 'P');
}
