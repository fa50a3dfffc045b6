#pragma once

#include "diffkd/geometry.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace diffkd {

enum class SurfaceTag : std::uint8_t { ground = 0, object = 1, clutter = 2 };

struct LidarPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;  // relative to the sensor; ground sits at -sensor_height
  double intensity = 0.0;
  int beam_id = 0;
  double range = 0.0;  // distance to the owning sensor at capture time
  SurfaceTag tag = SurfaceTag::ground;

  bool operator==(const LidarPoint&) const = default;
};

struct PointCloud {
  std::vector<LidarPoint> points;
  int num_beams = 0;

  std::size_t size() const { return points.size(); }
  bool operator==(const PointCloud&) const = default;
};

struct AgentView {
  PoseSE2 pose;  // in the world frame
  PointCloud cloud;  // in the agent's sensor frame
  bool operator==(const AgentView&) const = default;
};

/// One collaborative frame. agents[0] is the ego vehicle.
struct Scene {
  std::vector<AgentView> agents;
  std::vector<BoxBEV> gt_boxes;  // ego frame
  std::uint64_t seed = 0;

  std::size_t num_agents() const { return agents.size(); }
  bool operator==(const Scene&) const = default;
};

struct SceneConfig {
  double extent = 25.6;  // BEV half-width, metres
  int num_agents = 3;
  int max_agents = 5;
  int num_objects = 10;
  int num_clutter = 6;
  int num_beams = 32;
  int points_per_beam = 360;  // azimuth samples per revolution
  double elevation_min_deg = -24.0;
  double elevation_max_deg = 4.0;
  double sensor_height = 1.8;
  double max_range = 20.0;
  double range_noise = 0.02;
  double collaborator_min_dist = 10.0;
  double collaborator_max_dist = 20.0;
  int min_object_points = 5;

  /// Throws InvalidArgument on an unusable configuration.
  void validate() const;
};

/// Solid geometry that a scan can hit.
struct Obstacle {
  BoxBEV footprint;  // world frame
  double height = 1.5;
  double reflectivity = 0.5;
  SurfaceTag tag = SurfaceTag::object;
};

struct WorldLayout {
  std::vector<PoseSE2> agent_poses;
  std::vector<Obstacle> obstacles;
};

/// Per-agent scan of a layout: one ray per (beam, azimuth), nearest hit among
/// obstacles and the ground within max_range. Returns the cloud in the
/// agent's sensor frame; `hits_per_obstacle` (if given) receives hit counts.
PointCloud scan_layout(const WorldLayout& layout, std::size_t agent, const SceneConfig& config, std::uint64_t seed,
                       std::vector<int>* hits_per_obstacle = nullptr);

/// Deterministic synthetic scene for (config, seed).
Scene generate_scene(const SceneConfig& config, std::uint64_t seed);

/// Rigid SE(2) re-expression of a cloud captured at `src` in the frame of
/// `ego`. z, beam, intensity, tag and the recorded range are kept.
PointCloud transform_to_ego(const PointCloud& cloud, const PoseSE2& src, const PoseSE2& ego);

/// Gaussian perturbation of x, y (sigma_loc) and yaw (sigma_head).
PoseSE2 inject_pose_noise(const PoseSE2& pose, double sigma_loc, double sigma_head, std::uint64_t seed);

/// Agent i's cloud in the ego frame, optionally using a substitute pose for
/// the agent (e.g. a noisy localization estimate).
PointCloud aligned_cloud(const Scene& scene, std::size_t agent, const PoseSE2* pose_override = nullptr);

/// Union of all agents' aligned clouds (early fusion input).
PointCloud merged_cloud(const Scene& scene, const std::vector<PoseSE2>* pose_overrides = nullptr);

/// Derives an independent 64-bit seed from a base seed and stream ids.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace diffkd
