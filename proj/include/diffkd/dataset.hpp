#pragma once

#include "diffkd/scene.hpp"

#include <filesystem>
#include <iosfwd>
#include <vector>

namespace diffkd {

using Dataset = std::vector<Scene>;

// Binary layout (little-endian): magic "DKDS", u32 scene count, then per
// scene: u64 seed, u32 agent count, per agent {3 x f64 pose (x, y, yaw),
// u32 num_beams, u32 point count, per point {4 x f64 x y z intensity,
// u32 beam_id, f64 range, u8 tag}}, u32 box count, per box 6 x f64
// (cx, cy, w, l, yaw, score).
void write_dataset(std::ostream& os, const Dataset& data);
Dataset read_dataset(std::istream& is);
void save_dataset(const std::filesystem::path& file, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& file);

/// `count` scenes with seeds mix_seed(seed, i); scenes are generated in
/// parallel across up to `threads` workers (0 = DKD_THREADS / hardware).
Dataset generate_dataset(const SceneConfig& config, std::size_t count, std::uint64_t seed, unsigned threads = 0);

}  // namespace diffkd
