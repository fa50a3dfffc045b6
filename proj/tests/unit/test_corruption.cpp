#include <doctest.h>

#include "diffkd/corruption.hpp"
#include "diffkd/tensor.hpp"

#include <cmath>
#include <set>

using namespace diffkd;

namespace {

PointCloud sample_cloud(int beams = 64) {
  SceneConfig cfg;
  cfg.num_beams = beams;
  cfg.points_per_beam = 120;
  cfg.max_range = 40.0;
  cfg.num_agents = 1;
  return generate_scene(cfg, 3).agents[0].cloud;
}

// Every beam populated: three points per beam with cycling tags.
PointCloud beam_grid(int beams) {
  PointCloud c;
  c.num_beams = beams;
  for (int b = 0; b < beams; ++b) {
    for (int k = 0; k < 3; ++k) {
      LidarPoint p;
      p.x = 1.0 + b;
      p.y = k;
      p.range = std::hypot(p.x, p.y);
      p.beam_id = b;
      p.intensity = 0.25 * k;
      p.tag = static_cast<SurfaceTag>(k);
      c.points.push_back(p);
    }
  }
  return c;
}

std::set<int> beams_of(const PointCloud& c) {
  std::set<int> s;
  for (const auto& p : c.points) s.insert(p.beam_id);
  return s;
}

bool is_subsequence(const PointCloud& sub, const PointCloud& full) {
  std::size_t j = 0;
  for (const auto& p : sub.points) {
    while (j < full.size() && !(full.points[j] == p)) ++j;
    if (j == full.size()) return false;
    ++j;
  }
  return true;
}

}  // namespace

TEST_CASE("severity zero is the identity for every kind") {
  const PointCloud c = sample_cloud(16);
  for (auto kind : kAllCorruptions) CHECK(apply_corruption(c, kind, 0.0, 5) == c);
}

TEST_CASE("names round trip and bad input is rejected") {
  for (auto kind : kAllCorruptions) CHECK(parse_corruption(to_string(kind)) == kind);
  CHECK_THROWS_AS(parse_corruption("snow"), InvalidArgument);
  const PointCloud c = sample_cloud(16);
  CHECK_THROWS_AS(apply_corruption(c, CorruptionKind::fog, 1.5, 1), InvalidArgument);
  CHECK_THROWS_AS(apply_corruption(c, CorruptionKind::fog, -0.1, 1), InvalidArgument);
  CHECK_THROWS_AS(apply_corruption(c, static_cast<CorruptionKind>(99), 0.5, 1), InvalidArgument);
}

TEST_CASE("beam_missing at severity 0.5 keeps exactly half of 64 beams") {
  const PointCloud c = beam_grid(64);
  REQUIRE(beams_of(c).size() == 64);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CHECK(beams_of(apply_corruption(c, CorruptionKind::beam_missing, 0.5, seed)).size() == 32);
  }
}

TEST_CASE("cross_sensor keeps beams divisible by the stride") {
  const PointCloud c = beam_grid(16);
  const auto kept = beams_of(apply_corruption(c, CorruptionKind::cross_sensor, 0.7, 1));  // k = 3
  for (int b : kept) CHECK(b % 3 == 0);
  CHECK(kept.size() == 6);
}

TEST_CASE("water at severity 1 removes about 80% of ground points") {
  const PointCloud c = sample_cloud(16);
  std::size_t ground = 0;
  for (const auto& p : c.points) ground += p.tag == SurfaceTag::ground;
  REQUIRE(ground > 100);
  std::size_t removed = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const PointCloud w = apply_corruption(c, CorruptionKind::water, 1.0, seed);
    std::size_t left = 0;
    for (const auto& p : w.points) left += p.tag == SurfaceTag::ground;
    removed += ground - left;
    CHECK(w.size() - left == c.size() - ground);
  }
  const double n = 100.0 * static_cast<double>(ground);
  const double rate = static_cast<double>(removed) / n;
  // Binomial(n, 0.8): four standard errors.
  CHECK(std::abs(rate - 0.8) < 4.0 * std::sqrt(0.8 * 0.2 / n));
}

TEST_CASE("fog drop rate follows the range law") {
  PointCloud c;
  c.num_beams = 1;
  for (int i = 0; i < 20000; ++i) {
    LidarPoint p;
    p.x = 10.0;
    p.range = 10.0;
    c.points.push_back(p);
  }
  const PointCloud f = apply_corruption(c, CorruptionKind::fog, 1.0, 4);
  std::size_t kept = 0, clutter = 0;
  for (const auto& p : f.points) {
    if (p.tag == SurfaceTag::clutter) {
      ++clutter;
      CHECK(p.range < 10.0);
    } else {
      ++kept;
    }
  }
  CHECK(clutter == 400);
  const double expect = std::exp(-0.05 * 10.0);
  CHECK(std::abs(static_cast<double>(kept) / 20000.0 - expect) < 4.0 * std::sqrt(expect * (1 - expect) / 20000.0));
}

TEST_CASE("operators only drop points except fog, cross_talk and motion_blur") {
  const PointCloud c = sample_cloud(16);
  for (auto kind : kAllCorruptions) {
    for (double sev : {0.3, 1.0}) {
      INFO(to_string(kind) << " severity " << sev);
      const PointCloud out = apply_corruption(c, kind, sev, 21);
      CHECK(out == apply_corruption(c, kind, sev, 21));
      switch (kind) {
        case CorruptionKind::motion_blur:
          CHECK(out.size() == c.size());
          break;
        case CorruptionKind::cross_talk: {
          CHECK(out.size() == c.size());
          std::size_t changed = 0;
          for (std::size_t i = 0; i < c.size(); ++i) {
            if (out.points[i] == c.points[i]) continue;
            ++changed;
            CHECK(std::abs(out.points[i].x) <= 25.6);
            CHECK(std::abs(out.points[i].y) <= 25.6);
          }
          CHECK(changed == static_cast<std::size_t>(std::floor(sev * 0.1 * static_cast<double>(c.size()))));
          break;
        }
        case CorruptionKind::fog: {
          const auto bound = static_cast<std::size_t>(std::floor(sev * 0.02 * static_cast<double>(c.size())));
          CHECK(out.size() <= c.size() + bound);
          PointCloud survivors;
          for (const auto& p : out.points) {
            if (!(p.tag == SurfaceTag::clutter && p.intensity < 0.1 && p.range < 10.0)) survivors.points.push_back(p);
          }
          CHECK(is_subsequence(survivors, c));
          break;
        }
        default:
          CHECK(out.size() <= c.size());
          CHECK(is_subsequence(out, c));
      }
    }
  }
}

TEST_CASE("echo only touches object points") {
  const PointCloud c = sample_cloud(16);
  const PointCloud e = apply_corruption(c, CorruptionKind::echo, 1.0, 2);
  auto count = [](const PointCloud& pc, SurfaceTag t) {
    std::size_t n = 0;
    for (const auto& p : pc.points) n += p.tag == t;
    return n;
  };
  CHECK(count(e, SurfaceTag::ground) == count(c, SurfaceTag::ground));
  CHECK(count(e, SurfaceTag::object) <= count(c, SurfaceTag::object));
}

TEST_CASE("corrupt_scene uses distinct per-agent seeds") {
  SceneConfig cfg;
  cfg.num_beams = 16;
  cfg.points_per_beam = 120;
  const Scene s = generate_scene(cfg, 4);
  const Scene c = corrupt_scene(s, CorruptionKind::motion_blur, 0.5, 8);
  CHECK(c.gt_boxes == s.gt_boxes);
  CHECK(c == corrupt_scene(s, CorruptionKind::motion_blur, 0.5, 8));
  CHECK_FALSE(c.agents[0].cloud == s.agents[0].cloud);
  CHECK(corrupt_scene(s, CorruptionKind::fog, 0.0, 8) == s);
}
