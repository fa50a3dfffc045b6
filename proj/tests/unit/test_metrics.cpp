#include <doctest.h>

#include "support/oracles.hpp"

#include "diffkd/metrics.hpp"
#include "diffkd/tensor.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace diffkd;
using namespace diffkd::testing;

TEST_CASE("rotated_iou closed forms") {
  const BoxBEV a{0.0, 0.0, 1.0, 1.0, 0.0, 1.0};
  CHECK(rotated_iou(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rotated_iou(a, BoxBEV{5.0, 0.0, 1.0, 1.0, 0.0, 1.0}) == 0.0);
  CHECK(rotated_iou(a, BoxBEV{0.5, 0.0, 1.0, 1.0, 0.0, 1.0}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // a square turned by 90 degrees covers the same footprint
  CHECK(rotated_iou(a, BoxBEV{0.0, 0.0, 1.0, 1.0, std::numbers::pi / 2, 1.0}) ==
        doctest::Approx(1.0).epsilon(1e-12));
  // nested axis-aligned boxes: inner area over outer area
  CHECK(rotated_iou(BoxBEV{0, 0, 2, 4, 0, 1}, BoxBEV{0, 0, 1, 2, 0, 1}) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(rotated_iou(a, BoxBEV{0.0, 0.0, 0.0, 1.0, 0.0, 1.0}) == 0.0);
}

TEST_CASE("rotated_iou is symmetric and matches Monte-Carlo areas") {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 10; ++i) {
    const auto [a, b] = random_overlapping_pair(rng);
    const double iou = rotated_iou(a, b);
    CHECK(iou == doctest::Approx(rotated_iou(b, a)).epsilon(1e-12));
    CHECK(std::abs(iou - monte_carlo_iou(a, b, 1'000'000, 100 + i)) < 1e-3);
  }
}

TEST_CASE("average_precision trivial cases") {
  const std::vector<BoxBEV> gts{{0, 0, 2, 4, 0, 1}, {10, 0, 2, 4, 0, 1}};
  std::vector<BoxBEV> preds = gts;
  preds[0].score = 0.9;
  preds[1].score = 0.8;
  CHECK(average_precision(preds, gts, 0.7) == 1.0);
  CHECK(average_precision({}, gts, 0.5) == 0.0);
  CHECK(average_precision({}, {}, 0.5) == 1.0);
  CHECK(average_precision(preds, {}, 0.5) == 0.0);
}

TEST_CASE("average_precision matches the brute-force PR oracle") {
  std::mt19937_64 rng(5);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto scenes = random_detection_scenes(rng, 6);
    for (double thr : {0.5, 0.7}) {
      CHECK(average_precision(scenes, thr) == doctest::Approx(brute_force_ap(scenes, thr)).epsilon(1e-12));
      ++checked;
    }
  }
  CHECK(checked == 600);
}

TEST_CASE("planted false positive among three gts") {
  const std::vector<BoxBEV> gts{{0, 0, 2, 4, 0, 1}, {10, 0, 2, 4, 0, 1}, {0, 10, 2, 4, 0, 1}};
  std::vector<BoxBEV> preds{{0, 0, 2, 4, 0, 0.9}, {-10, -10, 2, 4, 0, 0.85}, {10, 0.2, 2, 4, 0, 0.7},
                            {0, 10, 2, 4, 0.05, 0.6}};
  const std::vector<SceneDetections> s{{preds, gts}};
  const double ap = average_precision(s, 0.5);
  CHECK(ap == doctest::Approx(brute_force_ap(s, 0.5)).epsilon(1e-12));
  CHECK(ap < 1.0);
  CHECK(ap > 0.5);
}

TEST_CASE("average_precision depends on score ranking only") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto scenes = random_detection_scenes(rng, 6);
    const double before = average_precision(scenes, 0.5);
    for (auto& s : scenes) {
      for (auto& p : s.preds) p.score *= 0.37;
    }
    CHECK(average_precision(scenes, 0.5) == before);
    CHECK(before >= 0.0);
    CHECK(before <= 1.0);
  }
}

TEST_CASE("interpolated_ap of a flat curve") {
  CHECK(interpolated_ap({1.0, 1.0}, {0.5, 1.0}) == doctest::Approx(1.0));
  // precision 1 up to recall 0.5, nothing beyond: 21 of 41 points
  CHECK(interpolated_ap({1.0}, {0.5}) == doctest::Approx(21.0 / 41.0));
}

TEST_CASE("mRCE reproduces the published Diff-KD rows") {
  const auto opv2v = compute_rce_mrce({92.03, 87.81}, {{87.86, 82.27},
                                                       {86.17, 70.57},
                                                       {71.04, 64.57},
                                                       {87.71, 81.27},
                                                       {81.94, 75.91},
                                                       {90.01, 85.24},
                                                       {91.72, 87.67}});
  CHECK(std::abs(100.0 * opv2v.mrce - 9.17) <= 0.005);
  const auto dair = compute_rce_mrce({78.27, 63.92}, {{48.15, 33.05},
                                                      {70.21, 49.02},
                                                      {48.53, 38.28},
                                                      {71.70, 53.75},
                                                      {43.00, 31.96},
                                                      {70.48, 54.51},
                                                      {77.11, 62.90}});
  CHECK(std::abs(100.0 * dair.mrce - 24.69) <= 0.005);
  CHECK(dair.mrce == (dair.rce50 + dair.rce70) / 2.0);
}

TEST_CASE("mRCE edge cases") {
  const auto same = compute_rce_mrce({0.6, 0.4}, {{0.6, 0.4}, {0.6, 0.4}});
  CHECK(same.mrce == 0.0);
  CHECK_THROWS_AS(compute_rce_mrce({0.0, 0.4}, {{0.1, 0.1}}), UndefinedMetric);
  CHECK_THROWS_AS(compute_rce_mrce({0.5, 0.4}, {}), InvalidArgument);
}
