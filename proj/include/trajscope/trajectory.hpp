#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajscope/errors.hpp"

namespace trajscope {

/// One tracked sample: position in scene units, time in seconds.
struct TrajectoryPoint {
  double x = 0.0;
  double y = 0.0;
  double t = 0.0;

  friend bool operator==(const TrajectoryPoint&, const TrajectoryPoint&) = default;
};

/**
 * Ordered (x, y, t) samples of one moving object.
 *
 * Invariants are checked on construction: at least one point, finite
 * coordinates, strictly increasing timestamps. Instances are immutable.
 */
class Trajectory {
 public:
  Trajectory(std::string id, std::vector<TrajectoryPoint> points)
      : id_(std::move(id)), points_(std::move(points)) {
    if (id_.empty()) throw ValidationError("trajectory id must not be empty");
    if (points_.empty()) throw ValidationError("trajectory '" + id_ + "' has no points");
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const auto& p = points_[i];
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.t)) {
        throw ValidationError("trajectory '" + id_ + "' has a non-finite coordinate at index " +
                              std::to_string(i));
      }
      if (i > 0 && !(p.t > points_[i - 1].t)) {
        throw ValidationError("trajectory '" + id_ + "' timestamps not strictly increasing at index " +
                              std::to_string(i));
      }
    }
  }

  [[nodiscard]] const std::string& id() const { return id_; }
  [[nodiscard]] std::span<const TrajectoryPoint> points() const { return points_; }
  [[nodiscard]] std::size_t size() const { return points_.size(); }
  /// Index of the last sample (the trajectory "length" L_i).
  [[nodiscard]] std::size_t last_index() const { return points_.size() - 1; }
  [[nodiscard]] const TrajectoryPoint& front() const { return points_.front(); }
  [[nodiscard]] const TrajectoryPoint& back() const { return points_.back(); }
  [[nodiscard]] double start_time() const { return points_.front().t; }
  [[nodiscard]] double end_time() const { return points_.back().t; }
  [[nodiscard]] double duration() const { return end_time() - start_time(); }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;

 private:
  std::string id_;
  std::vector<TrajectoryPoint> points_;
};

/// Start/end/duration summary used for clustering.
struct FeatureVector {
  double x_s = 0.0;
  double y_s = 0.0;
  double x_e = 0.0;
  double y_e = 0.0;
  double t_d = 0.0;

  static constexpr std::size_t kDims = 5;

  [[nodiscard]] std::array<double, kDims> as_array() const { return {x_s, y_s, x_e, y_e, t_d}; }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

inline FeatureVector to_feature(const Trajectory& traj) {
  const auto& a = traj.front();
  const auto& b = traj.back();
  return {a.x, a.y, b.x, b.y, b.t - a.t};
}

/**
 * Same path travelled backwards. Timestamps restart at the original t_0 and
 * advance by the original inter-sample gaps in reverse order, so duration
 * and the multiset of gaps are preserved.
 */
inline Trajectory reverse(const Trajectory& traj, std::string new_id = {}) {
  const auto pts = traj.points();
  const std::size_t n = pts.size();
  std::vector<TrajectoryPoint> out(n);
  double t = pts.front().t;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& src = pts[n - 1 - i];
    if (i > 0) t += pts[n - i].t - pts[n - 1 - i].t;
    out[i] = {src.x, src.y, t};
  }
  return Trajectory(new_id.empty() ? traj.id() : std::move(new_id), std::move(out));
}

}  // namespace trajscope
