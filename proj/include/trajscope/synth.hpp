#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "trajscope/errors.hpp"
#include "trajscope/labels.hpp"
#include "trajscope/rng.hpp"
#include "trajscope/trajectory.hpp"

namespace trajscope {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// A lane or route through the scene; one template per normal class.
struct PathTemplate {
  std::string name;
  std::vector<Vec2> control_points;
  double speed = 10.0;          // scene units per second
  double lateral_sigma = 0.5;   // per-trajectory lateral offset, scene units
};

enum class AnomalyType { truncation, speed_variation, opposite_direction, lane_change };

inline constexpr std::array<AnomalyType, 4> kAnomalyTypes = {
    AnomalyType::truncation, AnomalyType::speed_variation, AnomalyType::opposite_direction,
    AnomalyType::lane_change};

inline std::string anomaly_name(AnomalyType t) {
  switch (t) {
    case AnomalyType::truncation: return "truncation";
    case AnomalyType::speed_variation: return "speed";
    case AnomalyType::opposite_direction: return "opposite";
    case AnomalyType::lane_change: return "lane_change";
  }
  return "unknown";
}

struct AnomalyRecipe {
  std::size_t truncation = 0;
  std::size_t speed_variation = 0;
  std::size_t opposite_direction = 0;
  std::size_t lane_change = 0;
  // Kept prefix as a fraction of the samples.
  double truncation_min = 0.2;
  double truncation_max = 0.5;
  // Speed factor applied to the tail of the trajectory, drawn from
  // [slow_min, slow_max] or [fast_min, fast_max] with equal probability.
  double slow_min = 0.3;
  double slow_max = 0.5;
  double fast_min = 2.0;
  double fast_max = 3.0;
  // Lateral distance between a lane and its parallel neighbour.
  double lane_offset = 9.0;

  [[nodiscard]] std::size_t count(AnomalyType t) const {
    switch (t) {
      case AnomalyType::truncation: return truncation;
      case AnomalyType::speed_variation: return speed_variation;
      case AnomalyType::opposite_direction: return opposite_direction;
      case AnomalyType::lane_change: return lane_change;
    }
    return 0;
  }
  [[nodiscard]] std::size_t total() const {
    return truncation + speed_variation + opposite_direction + lane_change;
  }
};

struct SceneSpec {
  double width = 100.0;
  double height = 100.0;
  std::vector<PathTemplate> templates;
  std::vector<std::size_t> class_counts;  // one per template
  AnomalyRecipe anomalies;
  double frame_interval = 0.2;   // seconds between samples
  double speed_jitter = 0.1;     // relative speed spread of normal trajectories
  double point_jitter = 0.15;    // per-sample lateral noise, scene units
  double scene_duration = 600.0; // start times are spread over this window
  double train_fraction = 0.75;
  std::size_t max_retries = 64;
  std::uint64_t seed = 1;
};

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct LabeledDataset {
  std::vector<Trajectory> trajectories;
  std::map<std::string, ClassLabel> labels;
  std::map<std::string, Split> split;
  /// Template index each trajectory was generated from (anomalies included).
  std::map<std::string, std::size_t> source_template;

  [[nodiscard]] const Trajectory* find(const std::string& id) const {
    for (const auto& t : trajectories) {
      if (t.id() == id) return &t;
    }
    return nullptr;
  }
};

namespace detail {

inline double polyline_length(const std::vector<Vec2>& pts) {
  double len = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) len += std::hypot(pts[i].x - pts[i - 1].x, pts[i].y - pts[i - 1].y);
  return len;
}

// Position and unit left-normal at arc length s along the polyline.
inline std::pair<Vec2, Vec2> polyline_at(const std::vector<Vec2>& pts, double s) {
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double dx = pts[i].x - pts[i - 1].x;
    const double dy = pts[i].y - pts[i - 1].y;
    const double seg = std::hypot(dx, dy);
    if (seg <= 0.0) continue;
    if (s <= seg || i + 1 == pts.size()) {
      const double f = std::clamp(s / seg, 0.0, 1.0);
      return {{pts[i - 1].x + f * dx, pts[i - 1].y + f * dy}, {-dy / seg, dx / seg}};
    }
    s -= seg;
  }
  return {pts.back(), {0.0, 0.0}};
}

inline std::string pad(std::size_t v, int width) {
  auto s = std::to_string(v);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

struct Sampled {
  std::vector<TrajectoryPoint> points;
  std::vector<Vec2> normals;
};

// Samples a template at constant speed with a lateral offset profile.
template <class OffsetFn>
Sampled sample_template(const PathTemplate& tpl, const SceneSpec& spec, CounterRng& rng, OffsetFn&& offset_at) {
  const double length = polyline_length(tpl.control_points);
  const double speed = tpl.speed * (1.0 + spec.speed_jitter * (2.0 * rng.uniform() - 1.0));
  const double travel = length / speed;
  const auto steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(travel / spec.frame_interval)));
  const double lateral = rng.normal(0.0, tpl.lateral_sigma);
  const double t0 = rng.uniform(0.0, spec.scene_duration);
  Sampled out;
  out.points.reserve(steps + 1);
  for (std::size_t m = 0; m <= steps; ++m) {
    const double frac = static_cast<double>(m) / static_cast<double>(steps);
    const auto [pos, nrm] = polyline_at(tpl.control_points, frac * length);
    const double off = lateral + offset_at(frac) + rng.normal(0.0, spec.point_jitter);
    out.points.push_back({pos.x + off * nrm.x, pos.y + off * nrm.y, t0 + frac * travel});
    out.normals.push_back(nrm);
  }
  return out;
}

inline bool inside(const std::vector<TrajectoryPoint>& pts, const SceneSpec& spec) {
  return std::all_of(pts.begin(), pts.end(), [&](const TrajectoryPoint& p) {
    return p.x >= 0.0 && p.x <= spec.width && p.y >= 0.0 && p.y <= spec.height;
  });
}

}  // namespace detail

/**
 * Generates normal trajectories for every template plus the requested
 * anomalies:
 *   truncation          keeps a random 20-50% prefix of a normal path;
 *   speed variation     re-times the tail (after 30-60% of the path) by a
 *                       slow or fast speed factor;
 *   opposite direction  reverses a normal path;
 *   lane change         shifts the second half of a path onto a parallel
 *                       lane one lane_offset to the side.
 *
 * The result is a pure function of the spec (seed included). Normal
 * trajectories are split train/test by train_fraction; anomalies are always
 * test. Anomalies that would leave the canvas (or, for truncation, not be
 * shorter than every normal of their template) are redrawn up to
 * max_retries times.
 */
inline LabeledDataset synth_generate(const SceneSpec& spec) {
  if (spec.templates.empty()) throw ValidationError("scene has no path templates");
  if (spec.class_counts.size() != spec.templates.size()) {
    throw ValidationError("class_counts must have one entry per template");
  }
  if (!(spec.width > 0.0) || !(spec.height > 0.0)) throw ValidationError("scene extent must be positive");
  if (!(spec.frame_interval > 0.0)) throw ValidationError("frame interval must be positive");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ValidationError("train fraction must be in (0, 1)");
  }
  for (const auto& tpl : spec.templates) {
    if (tpl.control_points.size() < 2) {
      throw ValidationError("template '" + tpl.name + "' needs at least 2 control points");
    }
    if (!(tpl.speed > 0.0)) throw ValidationError("template '" + tpl.name + "' has zero speed");
    if (!(detail::polyline_length(tpl.control_points) > 0.0)) {
      throw ValidationError("template '" + tpl.name + "' has zero length");
    }
  }

  const CounterRng root(spec.seed);
  LabeledDataset ds;
  std::vector<std::string> normal_ids;
  std::vector<double> min_duration(spec.templates.size(), std::numeric_limits<double>::infinity());
  auto no_offset = [](double) { return 0.0; };

  for (std::size_t k = 0; k < spec.templates.size(); ++k) {
    for (std::size_t i = 0; i < spec.class_counts[k]; ++i) {
      auto rng = root.split("normal").split(k, i);
      auto s = detail::sample_template(spec.templates[k], spec, rng, no_offset);
      std::string id = "c" + detail::pad(k, 2) + "-" + detail::pad(i, 4);
      Trajectory tr(id, std::move(s.points));
      min_duration[k] = std::min(min_duration[k], tr.duration());
      ds.labels[id] = static_cast<std::int64_t>(k);
      ds.source_template[id] = k;
      normal_ids.push_back(id);
      ds.trajectories.push_back(std::move(tr));
    }
  }

  const auto& rec = spec.anomalies;
  for (std::size_t type_index = 0; type_index < kAnomalyTypes.size(); ++type_index) {
    const AnomalyType type = kAnomalyTypes[type_index];
    for (std::size_t i = 0; i < rec.count(type); ++i) {
      const std::string id = "a-" + anomaly_name(type) + "-" + detail::pad(i, 3);
      bool done = false;
      for (std::size_t attempt = 0; attempt < spec.max_retries && !done; ++attempt) {
        auto rng = root.split("anomaly").split(type_index, i).split(attempt);
        const auto k = static_cast<std::size_t>(rng.below(spec.templates.size()));
        const auto& tpl = spec.templates[k];
        std::vector<TrajectoryPoint> pts;
        switch (type) {
          case AnomalyType::truncation: {
            pts = detail::sample_template(tpl, spec, rng, no_offset).points;
            const double frac = rng.uniform(rec.truncation_min, rec.truncation_max);
            const auto keep = std::max<std::size_t>(2, static_cast<std::size_t>(frac * static_cast<double>(pts.size())));
            pts.resize(std::min(keep, pts.size()));
            if (!(pts.back().t - pts.front().t < min_duration[k])) pts.clear();
            break;
          }
          case AnomalyType::speed_variation: {
            pts = detail::sample_template(tpl, spec, rng, no_offset).points;
            const bool slow = rng.uniform() < 0.5;
            const double factor = slow ? rng.uniform(rec.slow_min, rec.slow_max) : rng.uniform(rec.fast_min, rec.fast_max);
            const auto split = static_cast<std::size_t>(rng.uniform(0.3, 0.6) * static_cast<double>(pts.size() - 1));
            std::vector<TrajectoryPoint> warped = pts;
            for (std::size_t m = split + 1; m < pts.size(); ++m) {
              warped[m].t = warped[m - 1].t + (pts[m].t - pts[m - 1].t) / factor;
            }
            pts = std::move(warped);
            break;
          }
          case AnomalyType::opposite_direction: {
            auto base = detail::sample_template(tpl, spec, rng, no_offset).points;
            const auto rev = reverse(Trajectory(id, std::move(base)));
            pts.assign(rev.points().begin(), rev.points().end());
            break;
          }
          case AnomalyType::lane_change: {
            const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
            const double start = rng.uniform(0.35, 0.55);
            const double ramp = 0.1;
            pts = detail::sample_template(tpl, spec, rng, [&](double f) {
                    if (f <= start) return 0.0;
                    return side * rec.lane_offset * std::min(1.0, (f - start) / ramp);
                  }).points;
            break;
          }
        }
        if (pts.size() < 2 || !detail::inside(pts, spec)) continue;
        ds.trajectories.emplace_back(id, std::move(pts));
        ds.labels[id] = "anomaly:" + anomaly_name(type);
        ds.source_template[id] = k;
        ds.split[id] = Split::test;
        done = true;
      }
      if (!done) {
        throw ValidationError("could not place " + anomaly_name(type) + " anomaly " + std::to_string(i) +
                              " inside the canvas after " + std::to_string(spec.max_retries) + " attempts");
      }
    }
  }

  auto order = normal_ids;
  auto split_rng = root.split("split");
  split_rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(order.size())));
  for (std::size_t i = 0; i < order.size(); ++i) ds.split[order[i]] = i < n_train ? Split::train : Split::test;
  return ds;
}

/**
 * Four-way junction on a 100x100 canvas with eight classes: four straight
 * through-movements and four turns. Lanes sit 6 units either side of the
 * centre lines.
 */
inline SceneSpec junction_scene(std::size_t per_class, std::uint64_t seed) {
  SceneSpec spec;
  spec.seed = seed;
  const double speed = 12.0;
  const double sigma = 0.6;
  spec.templates = {
      {"north", {{56, 100}, {56, 0}}, speed, sigma},
      {"south", {{44, 0}, {44, 100}}, speed, sigma},
      {"east", {{0, 56}, {100, 56}}, speed, sigma},
      {"west", {{100, 44}, {0, 44}}, speed, sigma},
      {"north-right", {{56, 100}, {56, 66}, {66, 56}, {100, 56}}, speed, sigma},
      {"south-right", {{44, 0}, {44, 34}, {34, 44}, {0, 44}}, speed, sigma},
      {"east-left", {{0, 56}, {40, 56}, {56, 40}, {56, 0}}, speed, sigma},
      {"west-left", {{100, 44}, {60, 44}, {44, 60}, {44, 100}}, speed, sigma},
  };
  spec.class_counts.assign(spec.templates.size(), per_class);
  return spec;
}

/// Parallel straight lanes, alternating direction; used for larger class counts.
inline SceneSpec lanes_scene(std::size_t num_classes, std::size_t per_class, std::uint64_t seed) {
  if (num_classes == 0) throw ValidationError("lanes scene needs at least one class");
  SceneSpec spec;
  spec.seed = seed;
  const double gap = 100.0 / static_cast<double>(num_classes + 1);
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double x = gap * static_cast<double>(k + 1);
    PathTemplate tpl{"lane" + std::to_string(k), {{x, 2}, {x, 98}}, 12.0, gap * 0.05};
    if (k % 2 == 1) std::reverse(tpl.control_points.begin(), tpl.control_points.end());
    spec.templates.push_back(std::move(tpl));
  }
  spec.class_counts.assign(num_classes, per_class);
  spec.anomalies.lane_offset = gap * 0.5;
  return spec;
}

}  // namespace trajscope
