#include "diffkd/geometry.hpp"

#include <cmath>

namespace diffkd {

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

Eigen::Vector2d PoseSE2::apply(const Eigen::Vector2d& p) const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * p.x() - s * p.y() + x, s * p.x() + c * p.y() + y};
}

Eigen::Vector2d PoseSE2::apply_inverse(const Eigen::Vector2d& p) const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double dx = p.x() - x, dy = p.y() - y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

std::array<Eigen::Vector2d, 4> BoxBEV::corners() const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const Eigen::Vector2d ax(c * l / 2, s * l / 2);
  const Eigen::Vector2d ay(-s * w / 2, c * w / 2);
  const Eigen::Vector2d ctr(cx, cy);
  return {ctr + ax + ay, ctr - ax + ay, ctr - ax - ay, ctr + ax - ay};
}

bool BoxBEV::contains(const Eigen::Vector2d& p) const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double dx = p.x() - cx, dy = p.y() - cy;
  const double u = c * dx + s * dy;
  const double v = -s * dx + c * dy;
  return std::abs(u) <= l / 2 && std::abs(v) <= w / 2;
}

BoxBEV transform_box(const BoxBEV& box, const PoseSE2& src, const PoseSE2& dst) {
  const Eigen::Vector2d world = src.apply({box.cx, box.cy});
  const Eigen::Vector2d local = dst.apply_inverse(world);
  BoxBEV out = box;
  out.cx = local.x();
  out.cy = local.y();
  out.yaw = wrap_angle(box.yaw + src.yaw - dst.yaw);
  return out;
}

double polygon_area(const Polygon& poly) {
  double a = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % n];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

Polygon clip_convex(const Polygon& subject, const Polygon& clip) {
  Polygon out = subject;
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Eigen::Vector2d a = clip[e];
    const Eigen::Vector2d b = clip[(e + 1) % clip.size()];
    const Eigen::Vector2d edge = b - a;
    auto side = [&](const Eigen::Vector2d& p) { return edge.x() * (p.y() - a.y()) - edge.y() * (p.x() - a.x()); };
    Polygon in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const auto& cur = in[i];
      const auto& prev = in[(i + in.size() - 1) % in.size()];
      const double sc = side(cur), sp = side(prev);
      if (sc >= 0) {
        if (sp < 0) out.push_back(prev + (cur - prev) * (sp / (sp - sc)));
        out.push_back(cur);
      } else if (sp >= 0) {
        out.push_back(prev + (cur - prev) * (sp / (sp - sc)));
      }
    }
  }
  return out;
}

}  // namespace diffkd
