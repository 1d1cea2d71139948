#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "trajscope/png.hpp"
#include "trajscope/raster.hpp"
#include "trajscope/synth.hpp"

using namespace trajscope;

namespace {

bool is_background(const GradientImage& img, int x, int y) {
  return img.at(x, y, 0) == 0.0f && img.at(x, y, 1) == 0.0f && img.at(x, y, 2) == 0.0f;
}

// Hue angle of a fully saturated, full value RGB pixel, in degrees.
double hue_angle(const GradientImage& img, int x, int y) {
  const double r = img.at(x, y, 0), g = img.at(x, y, 1), b = img.at(x, y, 2);
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double c = mx - mn;
  if (c == 0.0) return 0.0;
  double h = 0.0;
  if (mx == r) h = std::fmod((g - b) / c + 6.0, 6.0);
  else if (mx == g) h = (b - r) / c + 2.0;
  else h = (r - g) / c + 4.0;
  return 60.0 * h;
}

RasterConfig bounded(int size, double extent) {
  RasterConfig cfg;
  cfg.width = size;
  cfg.height = size;
  cfg.thickness = 1;
  cfg.margin = 0;
  cfg.bounds = SceneBounds{0, 0, extent, extent};
  return cfg;
}

}  // namespace

TEST(HsvToRgb, PrimaryAndSecondaryColours) {
  auto eq = [](Rgb c, double r, double g, double b) {
    EXPECT_DOUBLE_EQ(c.r, r);
    EXPECT_DOUBLE_EQ(c.g, g);
    EXPECT_DOUBLE_EQ(c.b, b);
  };
  eq(hsv_to_rgb(0, 1, 1), 1, 0, 0);
  eq(hsv_to_rgb(60, 1, 1), 1, 1, 0);
  eq(hsv_to_rgb(120, 1, 1), 0, 1, 0);
  eq(hsv_to_rgb(180, 1, 1), 0, 1, 1);
  eq(hsv_to_rgb(240, 1, 1), 0, 0, 1);
  eq(hsv_to_rgb(300, 1, 1), 1, 0, 1);
  eq(hsv_to_rgb(360, 1, 1), 1, 0, 0);
  eq(hsv_to_rgb(90, 0, 0.5), 0.5, 0.5, 0.5);
}

TEST(HsvToRgb, ClampsOutOfRangeWithWarning) {
  std::vector<std::string> warnings;
  set_warning_sink([&](const std::string& m) { warnings.push_back(m); });
  const auto c = hsv_to_rgb(400, 1.5, 1);
  set_warning_sink({});
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_DOUBLE_EQ(c.r, 1.0);
  EXPECT_DOUBLE_EQ(c.g, 0.0);
}

TEST(HueOf, EndpointsAndDegenerateInterval) {
  EXPECT_DOUBLE_EQ(hue_of(2, 2, 12, 180), 0.0);
  EXPECT_DOUBLE_EQ(hue_of(12, 2, 12, 180), 180.0);
  EXPECT_DOUBLE_EQ(hue_of(7, 2, 12, 180), 90.0);
  EXPECT_DOUBLE_EQ(hue_of(3, 3, 3, 180), 0.0);
  EXPECT_THROW(hue_of(13, 2, 12, 180), ValidationError);
}

TEST(Rasterize, SinglePointIsOneStamp) {
  auto cfg = bounded(16, 15);
  cfg.thickness = 3;
  const auto img = rasterize(Trajectory("p", {{5, 7, 0}}), cfg);
  int lit = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      if (!is_background(img, x, y)) {
        ++lit;
        EXPECT_LE(std::abs(x - 5), 1);
        EXPECT_LE(std::abs(y - 7), 1);
        EXPECT_EQ(img.at(x, y, 0), 1.0f);
      }
  EXPECT_EQ(lit, 9);
}

TEST(Rasterize, HueIncreasesAlongATwoPointLine) {
  const auto img = rasterize(Trajectory("h", {{0, 4, 0}, {15, 4, 1}}), bounded(16, 15));
  double prev = -1.0;
  for (int x = 0; x < 15; ++x) {
    ASSERT_FALSE(is_background(img, x, 4));
    const double h = hue_angle(img, x, 4);
    EXPECT_GT(h, prev);
    prev = h;
  }
  EXPECT_NEAR(hue_angle(img, 0, 4), 0.0, 1e-5);
  // Half-degree convention: span 180 covers the full 360 degree wheel, and
  // the endpoint colour wraps back to red.
  EXPECT_NEAR(hue_angle(img, 14, 4), 2.0 * 180.0 * 14.0 / 15.0, 1e-3);
  EXPECT_EQ(img.at(15, 4, 0), 1.0f);
  EXPECT_EQ(img.at(15, 4, 1), 0.0f);
}

TEST(Rasterize, DegreeUnitsUseHalfTheWheel) {
  auto cfg = bounded(16, 15);
  cfg.hue_unit = HueUnit::degrees;
  const auto img = rasterize(Trajectory("h", {{0, 4, 0}, {15, 4, 1}}), cfg);
  EXPECT_NEAR(hue_angle(img, 15, 4), 180.0, 1e-4);
}

TEST(Rasterize, MonochromeIsDirectionBlindGradientIsNot) {
  auto spec = junction_scene(4, 13);
  const auto ds = synth_generate(spec);
  RasterConfig grad;
  grad.width = grad.height = 64;
  grad.bounds = SceneBounds{};
  auto mono = grad;
  mono.mode = ColorMode::monochrome;
  for (const auto& tr : ds.trajectories) {
    const auto r = reverse(tr);
    EXPECT_TRUE(rasterize(tr, mono).same_pixels(rasterize(r, mono))) << tr.id();
    EXPECT_FALSE(rasterize(tr, grad).same_pixels(rasterize(r, grad))) << tr.id();
  }
}

TEST(Rasterize, LaterSegmentsOverwriteEarlierOnes) {
  // Out along y=5 then back along the same row: the return trip wins.
  const Trajectory tr("x", {{2, 5, 0}, {12, 5, 1}, {2, 5, 2}});
  const auto img = rasterize(tr, bounded(16, 15));
  // At x=2 the last writer is the final sample, hue span end (red again).
  EXPECT_EQ(img.at(2, 5, 0), 1.0f);
  EXPECT_EQ(img.at(2, 5, 1), 0.0f);
  EXPECT_EQ(img.at(2, 5, 2), 0.0f);
  // Mid-row pixel carries the hue of the return trip (angle > 180).
  EXPECT_GT(hue_angle(img, 7, 5), 180.0);
}

TEST(Rasterize, TranslationShiftsTheImage) {
  const Trajectory base("a", {{10, 10, 0}, {20, 14, 1}, {25, 30, 2}});
  std::vector<TrajectoryPoint> moved;
  for (const auto& p : base.points()) moved.push_back({p.x + 7, p.y + 3, p.t});
  const auto cfg = bounded(48, 47);
  const auto a = rasterize(base, cfg);
  const auto b = rasterize(Trajectory("b", moved), cfg);
  // Cross-correlation peak over a window of candidate shifts.
  int best_dx = 0, best_dy = 0;
  double best = -1.0;
  for (int dy = -10; dy <= 10; ++dy) {
    for (int dx = -10; dx <= 10; ++dx) {
      double s = 0.0;
      for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 48; ++x) {
          const int xs = x + dx, ys = y + dy;
          if (xs < 0 || ys < 0 || xs >= 48 || ys >= 48) continue;
          for (int c = 0; c < 3; ++c) s += a.at(x, y, c) * b.at(xs, ys, c);
        }
      if (s > best) {
        best = s;
        best_dx = dx;
        best_dy = dy;
      }
    }
  }
  EXPECT_EQ(best_dx, 7);
  EXPECT_EQ(best_dy, 3);
}

TEST(Rasterize, FitAllCentresTheTrajectory) {
  RasterConfig cfg;
  cfg.width = cfg.height = 32;
  cfg.thickness = 1;
  const auto img = rasterize(Trajectory("v", {{50, 0, 0}, {50, 80, 4}}), cfg);
  // Vertical line spans rows margin..31-margin in the middle column.
  for (int y = cfg.margin; y <= 31 - cfg.margin; ++y) EXPECT_FALSE(is_background(img, 16, y)) << y;
  EXPECT_TRUE(is_background(img, 16, 0));
}

TEST(Rasterize, RejectsPointsOutsideBoundsAndBadConfig) {
  EXPECT_THROW(rasterize(Trajectory("o", {{0, 0, 0}, {200, 0, 1}}), bounded(16, 15)), ValidationError);
  auto cfg = bounded(16, 15);
  cfg.thickness = 0;
  EXPECT_THROW(rasterize(Trajectory("o", {{0, 0, 0}}), cfg), ValidationError);
  cfg = bounded(16, 15);
  cfg.hue_span = 200;
  EXPECT_THROW(rasterize(Trajectory("o", {{0, 0, 0}}), cfg), ValidationError);
}

TEST(Png, RoundTripMatchesQuantizedImage) {
  const auto ds = synth_generate(junction_scene(1, 2));
  RasterConfig cfg;
  cfg.width = cfg.height = 40;
  for (const auto& tr : ds.trajectories) {
    const auto img = rasterize(tr, cfg);
    const auto back = decode_png(encode_png(img), tr.id());
    EXPECT_TRUE(back.same_pixels(quantize(img)));
    EXPECT_EQ(back.id, tr.id());
  }
  EXPECT_THROW(decode_png({1, 2, 3}, "junk"), ValidationError);
}

TEST(Png, FileRoundTripUsesStemAsId) {
  const auto dir = std::filesystem::temp_directory_path() / "trajscope_png_test";
  std::filesystem::create_directories(dir);
  const auto img = rasterize(Trajectory("q", {{0, 0, 0}, {3, 9, 1}}), RasterConfig{});
  write_png(dir / "c01-0003.png", img);
  const auto back = read_png(dir / "c01-0003.png");
  EXPECT_EQ(back.id, "c01-0003");
  EXPECT_TRUE(back.same_pixels(quantize(img)));
  std::filesystem::remove_all(dir);
}

TEST(ResizeNearest, DownsamplesByIndexing) {
  GradientImage img("r", 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) img.at(x, y, 0) = static_cast<float>(y * 4 + x);
  const auto small = resize_nearest(img, 2, 2);
  EXPECT_EQ(small.at(0, 0, 0), 0.0f);
  EXPECT_EQ(small.at(1, 0, 0), 2.0f);
  EXPECT_EQ(small.at(0, 1, 0), 8.0f);
  EXPECT_EQ(small.at(1, 1, 0), 10.0f);
}
