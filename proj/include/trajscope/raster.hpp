#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "trajscope/errors.hpp"
#include "trajscope/trajectory.hpp"

namespace trajscope {

/// How hue values in [0, span] map to an angle on the colour wheel.
enum class HueUnit {
  half_degrees,  // angle = 2 * hue
  degrees,       // angle = hue
};

enum class ColorMode {
  gradient,    // hue follows normalized elapsed time
  monochrome,  // constant hue 0; direction-blind
};

struct SceneBounds {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 100.0;
  double y_max = 100.0;
};

struct Rgb {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
};

struct RasterConfig {
  int width = 120;
  int height = 120;
  int thickness = 3;
  double hue_span = 180.0;
  HueUnit hue_unit = HueUnit::half_degrees;
  ColorMode mode = ColorMode::gradient;
  /// Explicit scene bounds; nullopt fits each trajectory's own bounding box.
  std::optional<SceneBounds> bounds;
  /// Border left free on every side, in pixels.
  int margin = 2;
  Rgb background{0.0, 0.0, 0.0};

  void validate() const {
    if (width < 8 || height < 8) throw ValidationError("raster size must be at least 8x8");
    if (thickness < 1) throw ValidationError("line thickness must be at least 1");
    if (!(hue_span > 0.0 && hue_span <= 180.0)) throw ValidationError("hue span must be in (0, 180]");
    if (margin < 0 || 2 * margin >= std::min(width, height)) throw ValidationError("margin too large");
    if (bounds && !(bounds->x_max > bounds->x_min && bounds->y_max > bounds->y_min)) {
      throw ValidationError("scene bounds must have positive extent");
    }
  }
};

/// Fixed-size RGB raster, interleaved row-major (y, x, channel), values in [0, 1].
struct GradientImage {
  std::string id;
  int width = 0;
  int height = 0;
  std::vector<float> rgb;

  GradientImage() = default;
  GradientImage(std::string id_, int w, int h, Rgb fill = {})
      : id(std::move(id_)), width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3) {
    for (std::size_t i = 0; i < rgb.size(); i += 3) {
      rgb[i] = static_cast<float>(fill.r);
      rgb[i + 1] = static_cast<float>(fill.g);
      rgb[i + 2] = static_cast<float>(fill.b);
    }
  }

  [[nodiscard]] std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * 3 + c;
  }
  [[nodiscard]] float at(int x, int y, int c) const { return rgb[index(x, y, c)]; }
  float& at(int x, int y, int c) { return rgb[index(x, y, c)]; }
  [[nodiscard]] std::size_t size() const { return rgb.size(); }

  /// Pixel data only; the id is not compared.
  [[nodiscard]] bool same_pixels(const GradientImage& o) const {
    return width == o.width && height == o.height && rgb == o.rgb;
  }
};

/// Normalized elapsed time scaled to [0, span]; 0 for a single-instant trajectory.
inline double hue_of(double t, double t0, double t_end, double span) {
  if (t_end == t0) {
    if (t != t0) throw ValidationError("time outside the trajectory interval");
    return 0.0;
  }
  if (t < t0 || t > t_end) throw ValidationError("time outside the trajectory interval");
  return (t - t0) / (t_end - t0) * span;
}

/// HSV cone to RGB. h in degrees [0, 360] (360 wraps to red), s and v in [0, 1].
inline Rgb hsv_to_rgb(double h, double s, double v) {
  if (!(h >= 0.0 && h <= 360.0) || !(s >= 0.0 && s <= 1.0) || !(v >= 0.0 && v <= 1.0)) {
    warn("hsv_to_rgb input out of range; clamping");
    h = std::isnan(h) ? 0.0 : std::clamp(h, 0.0, 360.0);
    s = std::isnan(s) ? 0.0 : std::clamp(s, 0.0, 1.0);
    v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
  }
  if (h == 360.0) h = 0.0;
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  return {r + m, g + m, b + m};
}

namespace detail {

struct PixelMap {
  double scale = 1.0;
  double off_x = 0.0;
  double off_y = 0.0;

  [[nodiscard]] std::pair<int, int> operator()(double x, double y) const {
    return {static_cast<int>(std::floor(off_x + x * scale + 0.5)), static_cast<int>(std::floor(off_y + y * scale + 0.5))};
  }
};

// Uniform scale (square pixels) that fits the box inside the margins, centred.
inline PixelMap fit_box(double x0, double y0, double x1, double y1, const RasterConfig& cfg) {
  const double avail_w = cfg.width - 1 - 2.0 * cfg.margin;
  const double avail_h = cfg.height - 1 - 2.0 * cfg.margin;
  const double ex = x1 - x0;
  const double ey = y1 - y0;
  double scale = 1.0;
  if (ex > 0.0 && ey > 0.0) {
    scale = std::min(avail_w / ex, avail_h / ey);
  } else if (ex > 0.0) {
    scale = avail_w / ex;
  } else if (ey > 0.0) {
    scale = avail_h / ey;
  }
  PixelMap m;
  m.scale = scale;
  m.off_x = cfg.margin + 0.5 * (avail_w - ex * scale) - x0 * scale;
  m.off_y = cfg.margin + 0.5 * (avail_h - ey * scale) - y0 * scale;
  return m;
}

// Bresenham pixels between two points, always stepped from the
// lexicographically smaller endpoint so the pixel set does not depend on
// travel direction.
inline std::vector<std::pair<int, int>> line_pixels(std::pair<int, int> a, std::pair<int, int> b, bool& flipped) {
  flipped = b < a;
  if (flipped) std::swap(a, b);
  std::vector<std::pair<int, int>> out;
  int x0 = a.first, y0 = a.second;
  const int x1 = b.first, y1 = b.second;
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    out.emplace_back(x0, y0);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
  return out;
}

}  // namespace detail

/// Nearest-neighbour resample.
inline GradientImage resize_nearest(const GradientImage& img, int width, int height) {
  if (width < 1 || height < 1) throw ValidationError("resize target must be positive");
  if (img.width == width && img.height == height) return img;
  GradientImage out(img.id, width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(img.height - 1, static_cast<int>((static_cast<long>(y) * img.height) / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(img.width - 1, static_cast<int>((static_cast<long>(x) * img.width) / width));
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
    }
  }
  return out;
}

/**
 * Renders a trajectory as a colour-gradient image.
 *
 * Each consecutive pair of samples becomes an integer line of the configured
 * thickness. Hue is the normalized elapsed time, interpolated in time along
 * each segment (the first pixel of a segment carries the hue of its start
 * sample); saturation and value are 1. Segments are drawn in temporal order
 * and overwrite earlier pixels. In monochrome mode every pixel gets hue 0.
 */
inline GradientImage rasterize(const Trajectory& traj, const RasterConfig& cfg) {
  cfg.validate();
  const auto pts = traj.points();
  detail::PixelMap map;
  if (cfg.bounds) {
    const auto& b = *cfg.bounds;
    for (const auto& p : pts) {
      if (p.x < b.x_min || p.x > b.x_max || p.y < b.y_min || p.y > b.y_max) {
        throw ValidationError("trajectory '" + traj.id() + "' lies outside the raster bounds");
      }
    }
    map = detail::fit_box(b.x_min, b.y_min, b.x_max, b.y_max, cfg);
  } else {
    double x0 = pts[0].x, x1 = pts[0].x, y0 = pts[0].y, y1 = pts[0].y;
    for (const auto& p : pts) {
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
    map = detail::fit_box(x0, y0, x1, y1, cfg);
  }

  GradientImage img(traj.id(), cfg.width, cfg.height, cfg.background);
  const int lo = -(cfg.thickness - 1) / 2;
  const int hi = cfg.thickness / 2;
  const double t0 = traj.start_time();
  const double t1 = traj.end_time();
  auto stamp = [&](int px, int py, const Rgb& c) {
    for (int dy = lo; dy <= hi; ++dy) {
      for (int dx = lo; dx <= hi; ++dx) {
        const int x = px + dx, y = py + dy;
        if (x < 0 || y < 0 || x >= cfg.width || y >= cfg.height) continue;
        img.at(x, y, 0) = static_cast<float>(c.r);
        img.at(x, y, 1) = static_cast<float>(c.g);
        img.at(x, y, 2) = static_cast<float>(c.b);
      }
    }
  };
  auto color_at = [&](double t) {
    if (cfg.mode == ColorMode::monochrome) return hsv_to_rgb(0.0, 1.0, 1.0);
    const double hue = hue_of(std::clamp(t, t0, t1), t0, t1, cfg.hue_span);
    const double angle = cfg.hue_unit == HueUnit::half_degrees ? 2.0 * hue : hue;
    return hsv_to_rgb(angle, 1.0, 1.0);
  };

  if (pts.size() == 1) {
    const auto [px, py] = map(pts[0].x, pts[0].y);
    stamp(px, py, color_at(t0));
    return img;
  }
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    bool flipped = false;
    const auto pix = detail::line_pixels(map(pts[i].x, pts[i].y), map(pts[i + 1].x, pts[i + 1].y), flipped);
    const std::size_t n = pix.size();
    for (std::size_t s = 0; s < n; ++s) {
      // Walk in travel order so later pixels of the segment land on top.
      const std::size_t idx = flipped ? n - 1 - s : s;
      const double frac = n > 1 ? static_cast<double>(s) / static_cast<double>(n - 1) : 0.0;
      const double t = pts[i].t + frac * (pts[i + 1].t - pts[i].t);
      stamp(pix[idx].first, pix[idx].second, color_at(t));
    }
  }
  return img;
}

}  // namespace trajscope
