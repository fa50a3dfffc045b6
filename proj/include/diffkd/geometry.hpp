#pragma once

#include <Eigen/Core>

#include <array>
#include <numbers>
#include <vector>

namespace diffkd {

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

/// Planar pose; yaw is kept wrapped to (-pi, pi].
struct PoseSE2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  /// Maps a point from this frame into the parent frame.
  Eigen::Vector2d apply(const Eigen::Vector2d& p) const;
  /// Maps a point from the parent frame into this frame.
  Eigen::Vector2d apply_inverse(const Eigen::Vector2d& p) const;
  bool operator==(const PoseSE2&) const = default;
};

/// Oriented BEV box. `l` runs along the heading, `w` across it.
struct BoxBEV {
  double cx = 0.0;
  double cy = 0.0;
  double w = 1.0;
  double l = 1.0;
  double yaw = 0.0;
  double score = 1.0;

  double area() const { return w * l; }
  /// Counter-clockwise corners.
  std::array<Eigen::Vector2d, 4> corners() const;
  bool contains(const Eigen::Vector2d& p) const;
  bool operator==(const BoxBEV&) const = default;
};

/// Expresses a box given in frame `src` in frame `dst` (both relative to a common parent).
BoxBEV transform_box(const BoxBEV& box, const PoseSE2& src, const PoseSE2& dst);

using Polygon = std::vector<Eigen::Vector2d>;

/// Signed shoelace area; positive for counter-clockwise order.
double polygon_area(const Polygon& poly);

/// Sutherland-Hodgman clip of `subject` against a convex counter-clockwise `clip`.
Polygon clip_convex(const Polygon& subject, const Polygon& clip);

}  // namespace diffkd
