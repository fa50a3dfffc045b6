#pragma once

#include "diffkd/param_set.hpp"
#include "diffkd/scene.hpp"

#include <random>
#include <string>

namespace diffkd {

/// Ego-frame BEV raster. Row index follows y, column index follows x.
struct BEVGridConfig {
  double x_min = -25.6, x_max = 25.6;
  double y_min = -25.6, y_max = 25.6;
  std::int64_t H = 64, W = 64;
  std::int64_t C = 32;               // backbone output channels
  std::int64_t pillar_channels = 16;  // per-pillar embedding width
  int max_points_per_pillar = 32;
  int norm_groups = 4;

  double cell_x() const { return (x_max - x_min) / static_cast<double>(W); }
  double cell_y() const { return (y_max - y_min) / static_cast<double>(H); }
  void validate() const;
  bool operator==(const BEVGridConfig&) const = default;
};

inline constexpr int kPointFeatures = 9;

struct PillarOutput {
  Tensor feature;  // pillar_channels x H x W
  std::size_t dropped = 0;    // points outside the grid
  std::size_t truncated = 0;  // points beyond max_points_per_pillar
};

void init_encoder_params(ParamSet& params, const BEVGridConfig& grid, std::mt19937_64& rng,
                         const std::string& prefix = "encoder");

/// Buckets points into pillars, embeds each point (position, intensity,
/// offsets to the pillar centroid and cell centre) with a shared linear +
/// ReLU layer, max-pools per pillar and scatters into the grid.
PillarOutput pillarize(const PointCloud& cloud, const BEVGridConfig& grid, const ParamSet& params,
                       const std::string& prefix = "encoder");

/// Two stride-1 3x3 conv + group-norm + ReLU blocks; keeps H x W.
Tensor encode_backbone(const Tensor& bev, const BEVGridConfig& grid, const ParamSet& params,
                       const std::string& prefix = "encoder");

inline Tensor encode_cloud(const PointCloud& cloud, const BEVGridConfig& grid, const ParamSet& params,
                           const std::string& prefix = "encoder") {
  return encode_backbone(pillarize(cloud, grid, params, prefix).feature, grid, params, prefix);
}

}  // namespace diffkd
