#include <doctest.h>

#include "diffkd/detection.hpp"
#include "diffkd/ops.hpp"

#include <cmath>
#include <sstream>

using namespace diffkd;

namespace {

// Detection map that reproduces a target map with confident logits.
DetectionMap map_from_targets(const TargetMap& t) {
  Vector logits(t.H * t.W);
  for (std::int64_t i = 0; i < t.H * t.W; ++i) logits[i] = t.positive[static_cast<std::size_t>(i)] ? 20.0 : -20.0;
  return {Tensor(Shape{1, t.H, t.W}, logits), Tensor(Shape{kRegChannels, t.H, t.W}, t.reg)};
}

}  // namespace

TEST_CASE("head shapes and zero-weight scores") {
  std::mt19937_64 rng(1);
  ParamSet p;
  init_head_params(p, 8, rng);
  const Tensor f = Tensor::randn({8, 5, 6}, rng);
  const DetectionMap d = head_forward(f, p);
  CHECK(d.cls_logits.shape() == Shape{1, 5, 6});
  CHECK(d.reg.shape() == Shape{kRegChannels, 5, 6});
  for (const auto& [path, e] : p) {
    Tensor t = e.value;
    t.mutable_values().setZero();
  }
  const Tensor s = sigmoid(head_forward(f, p).cls_logits);
  CHECK((s.values().array() - 0.5).abs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(head_forward(Tensor::randn({7, 5, 6}, rng), p), InvalidArgument);
}

TEST_CASE("target assignment basics") {
  const BEVGridConfig grid;
  const TargetMap empty = assign_targets({}, grid);
  CHECK(empty.num_positive == 0);
  CHECK(empty.cls.sum() == 0.0);

  // Cell (row 32, col 16) centre.
  const double cx = grid.x_min + 16.5 * grid.cell_x(), cy = grid.y_min + 32.5 * grid.cell_y();
  const TargetMap t = assign_targets({BoxBEV{cx, cy, 2.0, 4.0, 0.3, 1.0}}, grid);
  const auto cell = 32 * grid.W + 16;
  REQUIRE(t.num_positive == 1);
  CHECK(t.positive[static_cast<std::size_t>(cell)] == 1);
  const auto HW = grid.H * grid.W;
  CHECK(std::abs(t.reg[cell]) < 1e-12);
  CHECK(std::abs(t.reg[HW + cell]) < 1e-12);
  CHECK(t.reg[2 * HW + cell] == std::log(2.0));
  CHECK(t.reg[3 * HW + cell] == std::log(4.0));

  // Two centres in one cell: the larger box wins; outside centres are ignored.
  const TargetMap both = assign_targets(
      {BoxBEV{cx, cy, 1.0, 1.0, 0.0, 1.0}, BoxBEV{cx + 0.1, cy, 2.0, 5.0, 0.0, 1.0}, BoxBEV{99, 0, 2, 4, 0, 1}},
      grid);
  CHECK(both.num_positive == 1);
  CHECK(both.reg[3 * HW + cell] == std::log(5.0));
}

TEST_CASE("assign then decode round-trips boxes") {
  const BEVGridConfig grid;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> yaw(-3.0, 3.0), jit(-1.0, 1.0), size(1.5, 5.0);
  std::vector<BoxBEV> gt;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      gt.push_back(BoxBEV{-18.0 + 12.0 * i + jit(rng), -18.0 + 12.0 * j + jit(rng), size(rng), size(rng), yaw(rng), 1});
    }
  }
  const TargetMap t = assign_targets(gt, grid);
  REQUIRE(t.num_positive == 16);
  const auto boxes = decode_and_nms(map_from_targets(t), grid, 0.5, 0.2);
  REQUIRE(boxes.size() == gt.size());
  for (const auto& g : gt) {
    bool found = false;
    for (const auto& b : boxes) {
      if (std::abs(b.cx - g.cx) < 1e-9 && std::abs(b.cy - g.cy) < 1e-9) {
        found = true;
        CHECK(std::abs(b.w - g.w) < 1e-9);
        CHECK(std::abs(b.l - g.l) < 1e-9);
        CHECK(std::abs(wrap_angle(b.yaw - g.yaw)) < 1e-9);
        CHECK(std::abs(b.score - 1.0 / (1.0 + std::exp(-20.0))) < 1e-15);
      }
    }
    CHECK(found);
  }
}

TEST_CASE("decode thresholds, candidate cap and NMS") {
  const BEVGridConfig grid;
  TargetMap t = assign_targets({}, grid);
  CHECK(decode_and_nms(map_from_targets(t), grid, 0.05, 0.2).empty());

  const BoxBEV a{0, 0, 2, 4, 0, 0.9}, b{0, 0, 2, 4, 0, 0.8}, c{10, 0, 2, 4, 0, 0.7};
  const auto kept = nms({b, c, a}, 0.5);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].score == 0.9);
  CHECK(kept[1].score == 0.7);

  // Uniform confident logits everywhere: the cap limits candidates.
  DetectionMap d{Tensor(Shape{1, grid.H, grid.W}, 5.0), Tensor(Shape{kRegChannels, grid.H, grid.W}, 0.0)};
  const auto capped = decode_and_nms(d, grid, 0.05, 1.0, 10);
  CHECK(capped.size() == 10);
}

TEST_CASE("detections CSV format") {
  std::ostringstream os;
  write_detections_csv(os, 3, {BoxBEV{1.5, -2, 2, 4, 0.25, 0.5}}, true);
  CHECK(os.str().rfind("scene_id,cx,cy,w,l,yaw,score\n3,1.5,-2,2,4,0.25,0.5", 0) == 0);
}
