#pragma once

#include "diffkd/scene.hpp"

#include <array>
#include <string>
#include <string_view>

namespace diffkd {

enum class CorruptionKind { beam_missing, motion_blur, fog, cross_talk, cross_sensor, water, echo };

inline constexpr std::array<CorruptionKind, 7> kAllCorruptions = {
    CorruptionKind::beam_missing, CorruptionKind::motion_blur, CorruptionKind::fog,  CorruptionKind::cross_talk,
    CorruptionKind::cross_sensor, CorruptionKind::water,       CorruptionKind::echo,
};

std::string_view to_string(CorruptionKind kind);
/// Throws InvalidArgument for unknown names.
CorruptionKind parse_corruption(std::string_view name);

struct CorruptionConstants {
  double motion_sigma_max = 0.3;   // m
  double fog_beta_scale = 0.05;    // 1/m at severity 1
  double fog_clutter_fraction = 0.02;
  double fog_clutter_radius = 10.0;  // m
  double cross_talk_fraction = 0.1;
  double water_drop_scale = 0.8;
  double echo_drop_scale = 0.5;
  double extent = 25.6;  // half-width of the square cross-talk points land in
};

/// Deterministic per seed; severity in [0, 1]. Severity 0 returns the cloud unchanged.
PointCloud apply_corruption(const PointCloud& cloud, CorruptionKind kind, double severity, std::uint64_t seed,
                            const CorruptionConstants& k = {});

/// Corrupts every agent's cloud with per-agent seeds derived from `seed`.
Scene corrupt_scene(const Scene& scene, CorruptionKind kind, double severity, std::uint64_t seed,
                    const CorruptionConstants& k = {});

}  // namespace diffkd
