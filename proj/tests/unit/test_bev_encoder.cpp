#include <doctest.h>

#include "support/grad_suite.hpp"

#include <algorithm>
#include <cmath>

using namespace diffkd;
using namespace diffkd::testing;

namespace {

ParamSet encoder(const BEVGridConfig& grid, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  ParamSet p;
  init_encoder_params(p, grid, rng);
  return p;
}

LidarPoint point_at(double x, double y, double z = -1.0, double intensity = 0.5) {
  LidarPoint p;
  p.x = x;
  p.y = y;
  p.z = z;
  p.intensity = intensity;
  p.range = std::hypot(x, y, z);
  return p;
}

}  // namespace

TEST_CASE("empty cloud gives an all-zero pillar map") {
  const BEVGridConfig grid;
  const auto out = pillarize(PointCloud{}, grid, encoder(grid));
  CHECK(out.feature.shape() == Shape{grid.pillar_channels, grid.H, grid.W});
  CHECK(out.feature.values().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a single point fills exactly its own pillar") {
  const BEVGridConfig grid;
  const ParamSet params = encoder(grid);
  // cell (row 40, col 10): y in [25.6*(40/32)-25.6, ...), x likewise
  const double x = grid.x_min + (10 + 0.3) * grid.cell_x(), y = grid.y_min + (40 + 0.6) * grid.cell_y();
  PointCloud c;
  c.points = {point_at(x, y)};
  const Tensor f = pillarize(c, grid, params).feature;
  double here = 0, elsewhere = 0;
  for (std::int64_t ch = 0; ch < grid.pillar_channels; ++ch) {
    for (std::int64_t i = 0; i < grid.H; ++i) {
      for (std::int64_t j = 0; j < grid.W; ++j) {
        (i == 40 && j == 10 ? here : elsewhere) += std::abs(f.at(ch, i, j));
      }
    }
  }
  CHECK(here > 0);
  CHECK(elsewhere == 0);
}

TEST_CASE("pillarize is invariant to point order below the truncation limit") {
  const BEVGridConfig grid;
  const ParamSet params = encoder(grid, 3);
  std::mt19937_64 rng(5);
  PointCloud c = random_cloud(400, 20.0, rng);
  for (int k = 0; k < 12; ++k) c.points.push_back(point_at(1.1 + 0.02 * k, -3.3 + 0.03 * k, -1.0 + 0.1 * k));
  const Tensor a = pillarize(c, grid, params).feature;
  for (int trial = 0; trial < 3; ++trial) {
    std::shuffle(c.points.begin(), c.points.end(), rng);
    CHECK(pillarize(c, grid, params).feature.values() == a.values());
  }
}

TEST_CASE("truncation and out-of-range accounting") {
  BEVGridConfig grid;
  grid.max_points_per_pillar = 4;
  const ParamSet params = encoder(grid);
  PointCloud c;
  for (int k = 0; k < 10; ++k) c.points.push_back(point_at(0.1, 0.1, -1.0 + 0.05 * k));
  c.points.push_back(point_at(30.0, 0.0));
  c.points.push_back(point_at(0.0, -40.0));
  const auto out = pillarize(c, grid, params);
  CHECK(out.truncated == 6);
  CHECK(out.dropped == 2);

  // The kept points are the first four in insertion order.
  PointCloud first4;
  first4.points.assign(c.points.begin(), c.points.begin() + 4);
  CHECK(pillarize(first4, grid, params).feature.values() == out.feature.values());
}

TEST_CASE("backbone preserves the grid and maps zero to zero") {
  const BEVGridConfig grid = tiny_grid();
  const ParamSet params = encoder(grid);
  std::mt19937_64 rng(2);
  const Tensor x = Tensor::randn({grid.pillar_channels, grid.H, grid.W}, rng);
  CHECK(encode_backbone(x, grid, params).shape() == Shape{grid.C, grid.H, grid.W});
  const Tensor zero(Shape{grid.pillar_channels, grid.H, grid.W}, 0.0);
  CHECK(encode_backbone(zero, grid, params).values().cwiseAbs().maxCoeff() == 0.0);
  const Tensor wrong(Shape{grid.pillar_channels + 1, grid.H, grid.W}, 0.0);
  CHECK_THROWS_AS(encode_backbone(wrong, grid, params), InvalidArgument);
}

TEST_CASE("grid validation") {
  BEVGridConfig grid;
  grid.H = 0;
  CHECK_THROWS_AS(grid.validate(), InvalidArgument);
  grid = BEVGridConfig{};
  grid.x_max = grid.x_min;
  CHECK_THROWS_AS(grid.validate(), InvalidArgument);
}
