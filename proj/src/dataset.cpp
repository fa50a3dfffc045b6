#include "diffkd/dataset.hpp"

#include "diffkd/binary_io.hpp"
#include "diffkd/parallel.hpp"

#include <fstream>

namespace diffkd {

void write_dataset(std::ostream& os, const Dataset& data) {
  io::write_magic(os, "DKDS");
  io::write_u32(os, static_cast<std::uint32_t>(data.size()));
  for (const auto& scene : data) {
    io::write_u64(os, scene.seed);
    io::write_u32(os, static_cast<std::uint32_t>(scene.agents.size()));
    for (const auto& agent : scene.agents) {
      io::write_f64(os, agent.pose.x);
      io::write_f64(os, agent.pose.y);
      io::write_f64(os, agent.pose.yaw);
      io::write_u32(os, static_cast<std::uint32_t>(agent.cloud.num_beams));
      io::write_u32(os, static_cast<std::uint32_t>(agent.cloud.points.size()));
      for (const auto& p : agent.cloud.points) {
        io::write_f64(os, p.x);
        io::write_f64(os, p.y);
        io::write_f64(os, p.z);
        io::write_f64(os, p.intensity);
        io::write_u32(os, static_cast<std::uint32_t>(p.beam_id));
        io::write_f64(os, p.range);
        io::write_u8(os, static_cast<std::uint8_t>(p.tag));
      }
    }
    io::write_u32(os, static_cast<std::uint32_t>(scene.gt_boxes.size()));
    for (const auto& b : scene.gt_boxes) {
      for (double v : {b.cx, b.cy, b.w, b.l, b.yaw, b.score}) io::write_f64(os, v);
    }
  }
}

Dataset read_dataset(std::istream& is) {
  io::expect_magic(is, "DKDS");
  Dataset data(io::read_u32(is));
  for (auto& scene : data) {
    scene.seed = io::read_u64(is);
    scene.agents.resize(io::read_u32(is));
    for (auto& agent : scene.agents) {
      agent.pose.x = io::read_f64(is);
      agent.pose.y = io::read_f64(is);
      agent.pose.yaw = io::read_f64(is);
      agent.cloud.num_beams = static_cast<int>(io::read_u32(is));
      agent.cloud.points.resize(io::read_u32(is));
      for (auto& p : agent.cloud.points) {
        p.x = io::read_f64(is);
        p.y = io::read_f64(is);
        p.z = io::read_f64(is);
        p.intensity = io::read_f64(is);
        p.beam_id = static_cast<int>(io::read_u32(is));
        p.range = io::read_f64(is);
        const auto tag = io::read_u8(is);
        if (tag > 2) throw io::FormatError("invalid surface tag " + std::to_string(tag));
        p.tag = static_cast<SurfaceTag>(tag);
      }
    }
    scene.gt_boxes.resize(io::read_u32(is));
    for (auto& b : scene.gt_boxes) {
      b.cx = io::read_f64(is);
      b.cy = io::read_f64(is);
      b.w = io::read_f64(is);
      b.l = io::read_f64(is);
      b.yaw = io::read_f64(is);
      b.score = io::read_f64(is);
    }
  }
  return data;
}

void save_dataset(const std::filesystem::path& file, const Dataset& data) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + file.string() + "' for writing");
  write_dataset(os, data);
  if (!os) throw std::runtime_error("write to '" + file.string() + "' failed");
}

Dataset load_dataset(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + file.string() + "'");
  return read_dataset(is);
}

Dataset generate_dataset(const SceneConfig& config, std::size_t count, std::uint64_t seed, unsigned threads) {
  config.validate();
  Dataset data(count);
  parallel_for(count, threads, [&](std::size_t i) { data[i] = generate_scene(config, mix_seed(seed, i)); });
  return data;
}

}  // namespace diffkd
