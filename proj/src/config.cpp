#include "diffkd/config.hpp"

#include "diffkd/binary_io.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace diffkd {

namespace {

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt(std::int64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

double parse_double(const std::string& text, const std::string& key) {
  const std::string s = trim(text);
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InvalidArgument("config " + key + ": expected a number, got '" + text + "'");
  }
  return v;
}

std::int64_t parse_int(const std::string& text, const std::string& key) {
  const std::string s = trim(text);
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InvalidArgument("config " + key + ": expected an integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& text, const std::string& key) {
  const std::string s = trim(text);
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw InvalidArgument("config " + key + ": expected true/false, got '" + text + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class Get, class Set>
ConfigField field(std::string section, std::string key, std::string flag, std::string help, Get get, Set set) {
  return {std::move(section), std::move(key), std::move(flag), std::move(help), std::move(get), std::move(set)};
}

#define DKD_INT(section, key, flag, help, expr)                                                             \
  field(section, key, flag, help, [](const RunConfig& rc) { return fmt(static_cast<std::int64_t>(rc.expr)); }, \
        [](RunConfig& rc, const std::string& v) { rc.expr = static_cast<decltype(rc.expr)>(parse_int(v, key)); })
#define DKD_DOUBLE(section, key, flag, help, expr)                                         \
  field(section, key, flag, help, [](const RunConfig& rc) { return fmt(rc.expr); }, \
        [](RunConfig& rc, const std::string& v) { rc.expr = parse_double(v, key); })
#define DKD_BOOL(section, key, flag, help, expr)                                           \
  field(section, key, flag, help, [](const RunConfig& rc) { return fmt(rc.expr); }, \
        [](RunConfig& rc, const std::string& v) { rc.expr = parse_bool(v, key); })

std::vector<ConfigField> build_fields() {
  std::vector<ConfigField> f;
  f.push_back(DKD_INT("scene", "agents", "agents", "agents per scene (ego included)", scene.num_agents));
  f.push_back(DKD_INT("scene", "max_agents", "max-agents", "upper bound on agents", scene.max_agents));
  f.push_back(DKD_INT("scene", "objects", "objects", "vehicles per scene", scene.num_objects));
  f.push_back(DKD_INT("scene", "clutter", "clutter", "clutter posts per scene", scene.num_clutter));
  f.push_back(DKD_INT("scene", "beams", "beams", "LiDAR beams", scene.num_beams));
  f.push_back(DKD_INT("scene", "points_per_beam", "points-per-beam", "azimuth samples per beam",
                      scene.points_per_beam));
  f.push_back(DKD_DOUBLE("scene", "max_range", "max-range", "sensor range (m)", scene.max_range));
  f.push_back(DKD_DOUBLE("scene", "range_noise", "range-noise", "range noise std (m)", scene.range_noise));
  f.push_back(DKD_DOUBLE("scene", "extent", "scene-extent", "object placement half-width (m)", scene.extent));
  f.push_back(field(
      "grid", "range", "grid-range", "BEV half-width (m)", [](const RunConfig& rc) { return fmt(rc.grid.x_max); },
      [](RunConfig& rc, const std::string& v) {
        const double r = parse_double(v, "range");
        rc.grid.x_min = rc.grid.y_min = -r;
        rc.grid.x_max = rc.grid.y_max = r;
      }));
  f.push_back(DKD_INT("grid", "H", "grid-h", "BEV rows", grid.H));
  f.push_back(DKD_INT("grid", "W", "grid-w", "BEV columns", grid.W));
  f.push_back(DKD_INT("grid", "C", "channels", "BEV feature channels", grid.C));
  f.push_back(DKD_INT("grid", "pillar_channels", "pillar-channels", "pillar embedding width", grid.pillar_channels));
  f.push_back(DKD_INT("grid", "max_points_per_pillar", "max-points-per-pillar", "pillar truncation limit",
                      grid.max_points_per_pillar));
  f.push_back(DKD_INT("grid", "norm_groups", "norm-groups", "group-norm groups in the encoder", grid.norm_groups));
  f.push_back(DKD_INT("train", "train_scenes", "train-scenes", "training scenes", train_scenes));
  f.push_back(DKD_INT("train", "eval_scenes", "eval-scenes", "evaluation scenes", eval_scenes));
  f.push_back(DKD_INT("train", "epochs", "epochs", "training epochs", epochs));
  f.push_back(DKD_INT("train", "batch_size", "batch-size", "scenes per optimizer step", batch_size));
  f.push_back(DKD_DOUBLE("train", "lr", "lr", "Adam learning rate", lr));
  f.push_back(DKD_INT("train", "seed", "seed", "model seed", seed));
  f.push_back(DKD_INT("train", "data_seed", "data-seed", "dataset seed", data_seed));
  f.push_back(DKD_INT("train", "threads", "threads", "worker threads (0: DKD_THREADS or all cores)", threads));
  f.push_back(DKD_INT("diffusion", "T", "diffusion-steps", "training diffusion steps", schedule_T));
  f.push_back(DKD_DOUBLE("diffusion", "beta_min", "beta-min", "first beta", beta_min));
  f.push_back(DKD_DOUBLE("diffusion", "beta_max", "beta-max", "last beta", beta_max));
  f.push_back(DKD_INT("diffusion", "sample_steps", "sample-steps", "DDIM steps at inference", sample_steps));
  f.push_back(DKD_INT("diffusion", "train_sample_steps", "train-sample-steps", "DDIM steps for training refinement",
                      train_sample_steps));
  f.push_back(DKD_DOUBLE("diffusion", "x0_clip", "x0-clip", "clamp for the x0 estimate (0: off)", x0_clip));
  f.push_back(DKD_INT("diffusion", "width", "denoiser-width", "denoiser width", denoiser.width));
  f.push_back(DKD_INT("diffusion", "time_dim", "time-dim", "timestep embedding size", denoiser.time_dim));
  f.push_back(DKD_INT("diffusion", "groups", "denoiser-groups", "group-norm groups in the denoiser",
                      denoiser.groups));
  f.push_back(DKD_INT("fusion", "importance_hidden", "importance-hidden", "importance net hidden channels",
                      fusion.importance_hidden));
  f.push_back(DKD_INT("fusion", "reduce_ratio", "reduce-ratio", "bottleneck reduce ratio", fusion.reduce_ratio));
  f.push_back(DKD_INT("fusion", "groups", "fusion-groups", "group-norm groups in LGM", fusion.groups));
  f.push_back(DKD_BOOL("ablation", "use_pkd", "use-pkd", "diffusion refinement + distillation", use_pkd));
  f.push_back(DKD_BOOL("ablation", "use_agf", "use-agf", "adaptive gated fusion (else mean)", use_agf));
  f.push_back(DKD_BOOL("ablation", "use_lgm_teacher", "use-lgm-teacher", "LGM in the teacher", use_lgm_teacher));
  f.push_back(field(
      "eval", "corruptions", "corruptions", "comma-separated corruption kinds",
      [](const RunConfig& rc) {
        std::string s;
        for (auto k : rc.corruptions) s += (s.empty() ? "" : ",") + std::string(to_string(k));
        return s;
      },
      [](RunConfig& rc, const std::string& v) {
        rc.corruptions.clear();
        for (const auto& name : split(v, ',')) rc.corruptions.push_back(parse_corruption(name));
      }));
  f.push_back(DKD_DOUBLE("eval", "severity", "severity", "corruption severity in [0, 1]", severity));
  f.push_back(field(
      "eval", "pose_sigmas", "pose-sigmas", "loc:head pairs, comma-separated",
      [](const RunConfig& rc) {
        std::string s;
        for (const auto& [l, h] : rc.pose_sigmas) s += (s.empty() ? "" : ",") + fmt(l) + ":" + fmt(h);
        return s;
      },
      [](RunConfig& rc, const std::string& v) {
        rc.pose_sigmas.clear();
        for (const auto& pair : split(v, ',')) {
          const auto parts = split(pair, ':');
          if (parts.size() != 2) throw InvalidArgument("config pose_sigmas: expected loc:head, got '" + pair + "'");
          rc.pose_sigmas.emplace_back(parse_double(parts[0], "pose_sigmas"), parse_double(parts[1], "pose_sigmas"));
        }
      }));
  f.push_back(DKD_BOOL("eval", "pose_noise_on_ego", "pose-noise-on-ego", "also perturb the ego pose",
                       pose_noise_on_ego));
  f.push_back(DKD_DOUBLE("eval", "score_thresh", "score-thresh", "detection score threshold", score_thresh));
  f.push_back(DKD_DOUBLE("eval", "nms_iou", "nms-iou", "NMS IoU threshold", nms_iou));
  return f;
}

#undef DKD_INT
#undef DKD_DOUBLE
#undef DKD_BOOL

}  // namespace

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = build_fields();
  return fields;
}

std::string config_text(const RunConfig& rc) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : config_fields()) {
    if (f.section != section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get(rc) << '\n';
  }
  return os.str();
}

std::uint64_t config_hash(const RunConfig& rc) {
  RunConfig canonical = rc;
  canonical.threads = 0;  // affects speed only
  io::Fnv1a h;
  const std::string text = config_text(canonical);
  h.update(text.data(), text.size());
  return h.digest();
}

void apply_config(std::istream& is, RunConfig& rc) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  std::set<std::string> known;
  for (const auto& f : config_fields()) known.insert(f.section + "." + f.key);
  for (const auto& [section, child] : tree) {
    if (child.empty()) throw InvalidArgument("config: key '" + section + "' must be inside a [section]");
    for (const auto& [key, value] : child) {
      if (!known.count(section + "." + key)) throw InvalidArgument("config: unknown key [" + section + "] " + key);
    }
  }
  for (const auto& f : config_fields()) {
    if (auto v = tree.get_optional<std::string>(boost::property_tree::ptree::path_type(f.section + "." + f.key))) {
      f.set(rc, *v);
    }
  }
}

void load_config_file(const std::filesystem::path& file, RunConfig& rc) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot open config '" + file.string() + "'");
  apply_config(is, rc);
}

}  // namespace diffkd
