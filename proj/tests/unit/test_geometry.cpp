#include <doctest.h>

#include "diffkd/geometry.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace diffkd;
using std::numbers::pi;

TEST_CASE("wrap_angle maps into (-pi, pi]") {
  CHECK(wrap_angle(0.0) == 0.0);
  CHECK(wrap_angle(pi) == doctest::Approx(pi));
  CHECK(wrap_angle(-pi) == doctest::Approx(pi));
  CHECK(wrap_angle(3 * pi / 2) == doctest::Approx(-pi / 2));
  CHECK(wrap_angle(-5 * pi / 2) == doctest::Approx(-pi / 2));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = wrap_angle(u(rng));
    CHECK(a > -pi);
    CHECK(a <= pi);
  }
}

TEST_CASE("pose apply and apply_inverse are mutual inverses") {
  const PoseSE2 p{1.5, -2.0, 0.7};
  const Eigen::Vector2d q(0.3, 4.1);
  const Eigen::Vector2d back = p.apply_inverse(p.apply(q));
  CHECK(back.x() == doctest::Approx(q.x()).epsilon(1e-12));
  CHECK(back.y() == doctest::Approx(q.y()).epsilon(1e-12));
  const PoseSE2 rot{0.0, 0.0, pi / 2};
  const Eigen::Vector2d r = rot.apply(Eigen::Vector2d(1.0, 0.0));
  CHECK(r.x() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.y() == doctest::Approx(1.0));
}

TEST_CASE("box corners are counter-clockwise with the box area") {
  const BoxBEV b{1.0, 2.0, 2.0, 4.0, 0.4, 1.0};
  const auto c = b.corners();
  const Polygon poly(c.begin(), c.end());
  CHECK(polygon_area(poly) == doctest::Approx(8.0));
  CHECK(b.contains(Eigen::Vector2d(1.0, 2.0)));
  CHECK_FALSE(b.contains(Eigen::Vector2d(10.0, 2.0)));
  // l runs along the heading
  const BoxBEV axis{0.0, 0.0, 1.0, 4.0, 0.0, 1.0};
  CHECK(axis.contains(Eigen::Vector2d(1.9, 0.0)));
  CHECK_FALSE(axis.contains(Eigen::Vector2d(0.0, 1.9)));
}

TEST_CASE("transform_box round trip") {
  const BoxBEV b{3.0, -1.0, 1.8, 4.5, 2.9, 0.7};
  const PoseSE2 a{2.0, 1.0, 0.5}, e{-1.0, 4.0, -2.0};
  const BoxBEV t = transform_box(transform_box(b, a, e), e, a);
  CHECK(t.cx == doctest::Approx(b.cx).epsilon(1e-12));
  CHECK(t.cy == doctest::Approx(b.cy).epsilon(1e-12));
  CHECK(std::abs(wrap_angle(t.yaw - b.yaw)) < 1e-12);
  CHECK(t.w == b.w);
  CHECK(t.l == b.l);
  CHECK(t.score == b.score);
}

TEST_CASE("clip_convex of overlapping squares") {
  const Polygon a{{0, 0}, {2, 0}, {2, 2}, {0, 2}};
  const Polygon b{{1, 1}, {3, 1}, {3, 3}, {1, 3}};
  CHECK(polygon_area(clip_convex(a, b)) == doctest::Approx(1.0));
  const Polygon far{{5, 5}, {6, 5}, {6, 6}, {5, 6}};
  CHECK(polygon_area(clip_convex(a, far)) == doctest::Approx(0.0));
  const Polygon cw{{0, 0}, {0, 2}, {2, 2}, {2, 0}};
  CHECK(polygon_area(cw) == doctest::Approx(-4.0));
}
