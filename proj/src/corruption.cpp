#include "diffkd/corruption.hpp"

#include "diffkd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace diffkd {

namespace {

struct NamedKind {
  std::string_view name;
  CorruptionKind kind;
};

constexpr NamedKind kNames[] = {
    {"beam_missing", CorruptionKind::beam_missing}, {"motion_blur", CorruptionKind::motion_blur},
    {"fog", CorruptionKind::fog},                   {"cross_talk", CorruptionKind::cross_talk},
    {"cross_sensor", CorruptionKind::cross_sensor}, {"water", CorruptionKind::water},
    {"echo", CorruptionKind::echo},
};

double norm3(const LidarPoint& p) { return std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z); }

}  // namespace

std::string_view to_string(CorruptionKind kind) {
  for (const auto& n : kNames) {
    if (n.kind == kind) return n.name;
  }
  return "unknown";
}

CorruptionKind parse_corruption(std::string_view name) {
  for (const auto& n : kNames) {
    if (n.name == name) return n.kind;
  }
  throw InvalidArgument("unknown corruption kind '" + std::string(name) + "'");
}

PointCloud apply_corruption(const PointCloud& cloud, CorruptionKind kind, double severity, std::uint64_t seed,
                            const CorruptionConstants& k) {
  if (!(severity >= 0.0 && severity <= 1.0)) {
    throw InvalidArgument("corruption severity must lie in [0, 1], got " + std::to_string(severity));
  }
  if (severity == 0.0) return cloud;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointCloud out;
  out.num_beams = cloud.num_beams;
  out.points.reserve(cloud.points.size());

  switch (kind) {
    case CorruptionKind::beam_missing: {
      std::vector<int> beams(cloud.num_beams);
      std::iota(beams.begin(), beams.end(), 0);
      std::shuffle(beams.begin(), beams.end(), rng);
      const auto n_drop = static_cast<std::size_t>(std::floor(severity * cloud.num_beams));
      std::vector<bool> dropped(cloud.num_beams, false);
      for (std::size_t i = 0; i < n_drop; ++i) dropped[beams[i]] = true;
      for (const auto& p : cloud.points) {
        if (p.beam_id < 0 || p.beam_id >= cloud.num_beams || !dropped[p.beam_id]) out.points.push_back(p);
      }
      break;
    }
    case CorruptionKind::motion_blur: {
      std::normal_distribution<double> jitter(0.0, severity * k.motion_sigma_max);
      for (auto p : cloud.points) {
        p.x += jitter(rng);
        p.y += jitter(rng);
        p.z += jitter(rng);
        p.range = norm3(p);
        out.points.push_back(p);
      }
      break;
    }
    case CorruptionKind::fog: {
      const double beta = severity * k.fog_beta_scale;
      for (const auto& p : cloud.points) {
        if (unit(rng) >= 1.0 - std::exp(-beta * p.range)) out.points.push_back(p);
      }
      const auto n_clutter =
          static_cast<std::size_t>(std::floor(severity * k.fog_clutter_fraction * static_cast<double>(cloud.size())));
      std::uniform_int_distribution<int> beam(0, std::max(0, cloud.num_beams - 1));
      for (std::size_t i = 0; i < n_clutter; ++i) {
        // Airborne droplets: uniform in x, y, z slab, rejection sampled to range < radius.
        LidarPoint p;
        do {
          p.x = (2 * unit(rng) - 1) * k.fog_clutter_radius;
          p.y = (2 * unit(rng) - 1) * k.fog_clutter_radius;
          p.z = -2.0 + 3.0 * unit(rng);
        } while (norm3(p) >= k.fog_clutter_radius);
        p.range = norm3(p);
        p.intensity = 0.1 * unit(rng);
        p.beam_id = beam(rng);
        p.tag = SurfaceTag::clutter;
        out.points.push_back(p);
      }
      break;
    }
    case CorruptionKind::cross_talk: {
      std::vector<std::size_t> idx(cloud.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      const auto n_replace =
          static_cast<std::size_t>(std::floor(severity * k.cross_talk_fraction * static_cast<double>(cloud.size())));
      std::vector<bool> replace(cloud.size(), false);
      for (std::size_t i = 0; i < n_replace; ++i) replace[idx[i]] = true;
      std::uniform_int_distribution<int> beam(0, std::max(0, cloud.num_beams - 1));
      for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (!replace[i]) {
          out.points.push_back(cloud.points[i]);
          continue;
        }
        LidarPoint p;
        p.x = (2 * unit(rng) - 1) * k.extent;
        p.y = (2 * unit(rng) - 1) * k.extent;
        p.z = cloud.points[i].z;
        p.range = norm3(p);
        p.intensity = unit(rng);
        p.beam_id = beam(rng);
        p.tag = SurfaceTag::clutter;
        out.points.push_back(p);
      }
      break;
    }
    case CorruptionKind::cross_sensor: {
      const int stride = 1 + static_cast<int>(std::floor(severity * 3.0));
      for (const auto& p : cloud.points) {
        if (p.beam_id % stride == 0) out.points.push_back(p);
      }
      break;
    }
    case CorruptionKind::water: {
      const double drop = severity * k.water_drop_scale;
      for (const auto& p : cloud.points) {
        if (p.tag != SurfaceTag::ground || unit(rng) >= drop) out.points.push_back(p);
      }
      break;
    }
    case CorruptionKind::echo: {
      for (const auto& p : cloud.points) {
        const double drop = severity * k.echo_drop_scale * (1.0 - p.intensity);
        if (p.tag != SurfaceTag::object || unit(rng) >= drop) out.points.push_back(p);
      }
      break;
    }
    default:
      throw InvalidArgument("unknown corruption kind");
  }
  return out;
}

Scene corrupt_scene(const Scene& scene, CorruptionKind kind, double severity, std::uint64_t seed,
                    const CorruptionConstants& k) {
  Scene out = scene;
  for (std::size_t a = 0; a < out.agents.size(); ++a) {
    out.agents[a].cloud =
        apply_corruption(scene.agents[a].cloud, kind, severity, mix_seed(seed, scene.seed, a), k);
  }
  return out;
}

}  // namespace diffkd
