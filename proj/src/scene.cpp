#include "diffkd/scene.hpp"

#include "diffkd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace diffkd {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Entry distance of a ray into an obstacle, or +inf. Works in the obstacle's
// footprint frame; z is sensor-relative with the ground at -sensor_height.
double ray_obstacle(const Eigen::Vector2d& origin, const Eigen::Vector3d& dir, const Obstacle& ob,
                    double sensor_height) {
  const double c = std::cos(ob.footprint.yaw), s = std::sin(ob.footprint.yaw);
  const double ox = origin.x() - ob.footprint.cx, oy = origin.y() - ob.footprint.cy;
  const double o[3] = {c * ox + s * oy, -s * ox + c * oy, 0.0};
  const double d[3] = {c * dir.x() + s * dir.y(), -s * dir.x() + c * dir.y(), dir.z()};
  const double lo[3] = {-ob.footprint.l / 2, -ob.footprint.w / 2, -sensor_height};
  const double hi[3] = {ob.footprint.l / 2, ob.footprint.w / 2, -sensor_height + ob.height};
  double tmin = 0.0, tmax = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-12) {
      if (o[a] < lo[a] || o[a] > hi[a]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double t0 = (lo[a] - o[a]) / d[a], t1 = (hi[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return std::numeric_limits<double>::infinity();
  }
  return tmin > 0.0 ? tmin : std::numeric_limits<double>::infinity();
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(base) ^ (a + 0x632be59bd9b4e019ULL)) ^ (b + 0x85157af5ULL));
}

void SceneConfig::validate() const {
  if (num_agents < 1) throw InvalidArgument("scene config: at least one agent is required");
  if (num_agents > max_agents) {
    throw InvalidArgument("scene config: " + std::to_string(num_agents) + " agents exceeds max " +
                          std::to_string(max_agents));
  }
  if (!(extent > 0) || num_objects < 0 || num_clutter < 0 || num_beams < 1 || points_per_beam < 1 ||
      !(max_range > 0) || !(sensor_height > 0) || elevation_max_deg <= elevation_min_deg ||
      collaborator_max_dist < collaborator_min_dist || min_object_points < 1) {
    throw InvalidArgument("scene config: invalid geometry or sampling parameters");
  }
}

PointCloud scan_layout(const WorldLayout& layout, std::size_t agent, const SceneConfig& config, std::uint64_t seed,
                       std::vector<int>* hits_per_obstacle) {
  const PoseSE2& pose = layout.agent_poses.at(agent);
  std::mt19937_64 rng(mix_seed(seed, 0x5ca1ULL, agent));
  std::normal_distribution<double> range_noise(0.0, 1.0);
  std::normal_distribution<double> refl_noise(0.0, 0.05);
  std::uniform_real_distribution<double> ground_refl(0.05, 0.25);
  if (hits_per_obstacle) hits_per_obstacle->assign(layout.obstacles.size(), 0);

  PointCloud cloud;
  cloud.num_beams = config.num_beams;
  const Eigen::Vector2d origin(pose.x, pose.y);
  for (int b = 0; b < config.num_beams; ++b) {
    const double elev =
        (config.num_beams == 1 ? config.elevation_min_deg
                               : config.elevation_min_deg + b * (config.elevation_max_deg - config.elevation_min_deg) /
                                                                (config.num_beams - 1)) *
        kDeg;
    for (int k = 0; k < config.points_per_beam; ++k) {
      const double az = 2.0 * std::numbers::pi * k / config.points_per_beam;
      const Eigen::Vector3d local_dir(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az), std::sin(elev));
      const double world_az = az + pose.yaw;
      const Eigen::Vector3d world_dir(std::cos(elev) * std::cos(world_az), std::cos(elev) * std::sin(world_az),
                                      std::sin(elev));
      double best = std::numeric_limits<double>::infinity();
      int hit = -1;
      if (local_dir.z() < 0) best = config.sensor_height / -local_dir.z();
      for (std::size_t o = 0; o < layout.obstacles.size(); ++o) {
        const double t = ray_obstacle(origin, world_dir, layout.obstacles[o], config.sensor_height);
        if (t < best) {
          best = t;
          hit = static_cast<int>(o);
        }
      }
      if (!(best <= config.max_range)) continue;
      const double noise = config.range_noise > 0 ? config.range_noise * range_noise(rng) : 0.0;
      const double r = std::max(0.05, best + noise);
      LidarPoint p;
      p.x = r * local_dir.x();
      p.y = r * local_dir.y();
      p.z = r * local_dir.z();
      p.range = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
      p.beam_id = b;
      if (hit < 0) {
        p.tag = SurfaceTag::ground;
        p.intensity = ground_refl(rng);
      } else {
        const auto& ob = layout.obstacles[hit];
        p.tag = ob.tag;
        p.intensity = std::clamp(ob.reflectivity + refl_noise(rng), 0.0, 1.0);
        if (hits_per_obstacle) ++(*hits_per_obstacle)[hit];
      }
      cloud.points.push_back(p);
    }
  }
  return cloud;
}

Scene generate_scene(const SceneConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(mix_seed(seed, 0x9e0ULL));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double margin = 3.0;

  WorldLayout layout;
  layout.agent_poses.push_back(PoseSE2{});
  for (int i = 1; i < config.num_agents; ++i) {
    PoseSE2 pose;
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double d = uniform(config.collaborator_min_dist, config.collaborator_max_dist);
      const double a = uniform(-std::numbers::pi, std::numbers::pi);
      pose = PoseSE2{d * std::cos(a), d * std::sin(a), wrap_angle(uniform(-std::numbers::pi, std::numbers::pi))};
      const bool inside = std::abs(pose.x) < config.extent - margin && std::abs(pose.y) < config.extent - margin;
      bool spaced = true;
      for (const auto& q : layout.agent_poses) spaced = spaced && std::hypot(q.x - pose.x, q.y - pose.y) > 8.0;
      if (inside && spaced) break;
    }
    layout.agent_poses.push_back(pose);
  }

  auto clear_of = [&](double x, double y, double from_objects, double from_agents) {
    for (const auto& ob : layout.obstacles) {
      if (std::hypot(ob.footprint.cx - x, ob.footprint.cy - y) < from_objects) return false;
    }
    for (const auto& p : layout.agent_poses) {
      if (std::hypot(p.x - x, p.y - y) < from_agents) return false;
    }
    return true;
  };

  for (int i = 0; i < config.num_objects; ++i) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      Obstacle ob;
      ob.footprint.cx = uniform(-config.extent + 2.5, config.extent - 2.5);
      ob.footprint.cy = uniform(-config.extent + 2.5, config.extent - 2.5);
      const double heading = unit(rng) < 0.5 ? 0.0 : std::numbers::pi / 2;
      ob.footprint.yaw = wrap_angle(heading + uniform(-0.2, 0.2));
      ob.footprint.l = uniform(3.8, 4.8);
      ob.footprint.w = uniform(1.7, 2.1);
      ob.height = uniform(1.4, 1.9);
      ob.reflectivity = uniform(0.3, 0.9);
      ob.tag = SurfaceTag::object;
      if (clear_of(ob.footprint.cx, ob.footprint.cy, 6.0, 4.0)) {
        layout.obstacles.push_back(ob);
        break;
      }
    }
  }
  for (int i = 0; i < config.num_clutter; ++i) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      Obstacle ob;
      ob.footprint = BoxBEV{uniform(-config.extent, config.extent), uniform(-config.extent, config.extent), 0.6, 0.6,
                            0.0, 1.0};
      ob.height = 2.5;
      ob.reflectivity = uniform(0.4, 0.7);
      ob.tag = SurfaceTag::clutter;
      if (clear_of(ob.footprint.cx, ob.footprint.cy, 3.5, 3.0)) {
        layout.obstacles.push_back(ob);
        break;
      }
    }
  }

  // Drop objects no agent sees well enough; removing an occluder can only
  // expose others, so iterate until the visible set is stable.
  Scene scene;
  scene.seed = seed;
  while (true) {
    std::vector<int> total(layout.obstacles.size(), 0);
    scene.agents.clear();
    for (std::size_t a = 0; a < layout.agent_poses.size(); ++a) {
      std::vector<int> hits;
      scene.agents.push_back(AgentView{layout.agent_poses[a], scan_layout(layout, a, config, seed, &hits)});
      for (std::size_t o = 0; o < hits.size(); ++o) total[o] += hits[o];
    }
    std::vector<Obstacle> kept;
    for (std::size_t o = 0; o < layout.obstacles.size(); ++o) {
      const auto& ob = layout.obstacles[o];
      if (ob.tag != SurfaceTag::object || total[o] >= config.min_object_points) kept.push_back(ob);
    }
    if (kept.size() == layout.obstacles.size()) break;
    layout.obstacles = std::move(kept);
  }

  const PoseSE2& ego = layout.agent_poses[0];
  for (const auto& ob : layout.obstacles) {
    if (ob.tag == SurfaceTag::object) scene.gt_boxes.push_back(transform_box(ob.footprint, PoseSE2{}, ego));
  }
  return scene;
}

PointCloud transform_to_ego(const PointCloud& cloud, const PoseSE2& src, const PoseSE2& ego) {
  PointCloud out = cloud;
  if (src == ego) return out;
  // Compose once: ego^-1 * src.
  const double dyaw = src.yaw - ego.yaw;
  const double c = std::cos(dyaw), s = std::sin(dyaw);
  const Eigen::Vector2d t = ego.apply_inverse({src.x, src.y});
  for (auto& p : out.points) {
    const double x = c * p.x - s * p.y + t.x();
    const double y = s * p.x + c * p.y + t.y();
    p.x = x;
    p.y = y;
  }
  return out;
}

PoseSE2 inject_pose_noise(const PoseSE2& pose, double sigma_loc, double sigma_head, std::uint64_t seed) {
  if (sigma_loc < 0 || sigma_head < 0) throw InvalidArgument("inject_pose_noise: negative standard deviation");
  if (sigma_loc == 0 && sigma_head == 0) return pose;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  PoseSE2 out = pose;
  const double dx = n(rng), dy = n(rng), dh = n(rng);
  out.x += sigma_loc * dx;
  out.y += sigma_loc * dy;
  out.yaw = wrap_angle(out.yaw + sigma_head * dh);
  return out;
}

PointCloud aligned_cloud(const Scene& scene, std::size_t agent, const PoseSE2* pose_override) {
  const auto& view = scene.agents.at(agent);
  return transform_to_ego(view.cloud, pose_override ? *pose_override : view.pose, scene.agents.at(0).pose);
}

PointCloud merged_cloud(const Scene& scene, const std::vector<PoseSE2>* pose_overrides) {
  PointCloud out;
  for (std::size_t a = 0; a < scene.num_agents(); ++a) {
    const PoseSE2* p = pose_overrides ? &pose_overrides->at(a) : nullptr;
    auto c = aligned_cloud(scene, a, p);
    out.num_beams = std::max(out.num_beams, c.num_beams);
    out.points.insert(out.points.end(), c.points.begin(), c.points.end());
  }
  return out;
}

}  // namespace diffkd
