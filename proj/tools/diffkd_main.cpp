// Command-line front end: gen-data, corrupt, train-teacher, train-student,
// eval, report. Exit codes: 0 ok, 2 usage, 3 data/IO, 4 non-finite loss.

#include "diffkd/binary_io.hpp"
#include "diffkd/config.hpp"
#include "diffkd/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace diffkd;

namespace {

constexpr const char* kVersion = "1.0.0";

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

/// Configuration errors detected after parsing are usage errors.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_file;
  std::map<std::string, std::string> overrides;  // field flag -> text
};

void add_config_flags(CLI::App* cmd, Common& common, const std::vector<std::string>& skip = {}) {
  cmd->add_option("--config", common.config_file, "run config file ([section] key = value)");
  for (const auto& f : config_fields()) {
    if (std::find(skip.begin(), skip.end(), f.flag) != skip.end()) continue;
    cmd->add_option_function<std::string>(
           "--" + f.flag, [&common, flag = f.flag](const std::string& v) { common.overrides[flag] = v; },
           f.help + " [" + f.section + "] " + f.key)
        ->type_name("VALUE");
  }
}

RunConfig build_config(const Common& common) {
  RunConfig rc;
  try {
    if (!common.config_file.empty()) load_config_file(common.config_file, rc);
    for (const auto& f : config_fields()) {
      if (auto it = common.overrides.find(f.flag); it != common.overrides.end()) f.set(rc, it->second);
    }
    rc.finalize();
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  return rc;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string file_hash(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read '" + p.string() + "'");
  io::Fnv1a h;
  char buf[1 << 16];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) h.update(buf, static_cast<std::size_t>(is.gcount()));
  return hex64(h.digest());
}

/// Everything needed to regenerate the outputs, written as <primary>.manifest.json.
void write_manifest(const std::string& command, const std::vector<std::string>& argv, const RunConfig* rc,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  nlohmann::ordered_json j;
  j["tool"] = "diffkd";
  j["version"] = kVersion;
  j["command"] = command;
  j["argv"] = argv;
  if (rc) {
    j["config"] = config_text(*rc);
    j["config_hash"] = hex64(config_hash(*rc));
    j["seed"] = rc->seed;
    j["data_seed"] = rc->data_seed;
  }
  auto& in = j["inputs"] = nlohmann::ordered_json::object();
  for (const auto& p : inputs) in[p.string()] = file_hash(p);
  auto& out = j["outputs"] = nlohmann::ordered_json::object();
  for (const auto& p : outputs) out[p.string()] = file_hash(p);
  std::ofstream os(outputs.front().string() + ".manifest.json");
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write manifest for '" + outputs.front().string() + "'");
}

template <class Fn>
void write_file(const fs::path& p, Fn&& fn) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + p.string() + "' for writing");
  fn(os);
  if (!os) throw std::runtime_error("error writing '" + p.string() + "'");
}

StepHook progress(const char* what) {
  return [what](std::int64_t step, const LossBundle& b) {
    if (step % 100 == 0) std::cerr << what << " step " << step << " l_final " << b.l_final << '\n';
  };
}

Dataset training_data(const std::string& file, const RunConfig& rc, std::vector<fs::path>& inputs) {
  if (file.empty()) return make_train_set(rc);
  inputs.emplace_back(file);
  return load_dataset(file);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diff-KD collaborative perception experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  const std::vector<std::string> args(argv, argv + argc);

  // gen-data
  Common gen_common;
  std::string gen_out, gen_split = "train";
  std::optional<std::size_t> gen_scenes;
  std::optional<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic scene dataset");
  gen->add_option("--out", gen_out, "output dataset file")->required();
  gen->add_option("--split", gen_split, "seed stream: train or eval")->check(CLI::IsMember({"train", "eval"}));
  gen->add_option("--scenes", gen_scenes, "scene count (default: the split size from the config)");
  gen->add_option("--seed", gen_seed, "dataset seed ([train] data_seed)");
  add_config_flags(gen, gen_common, {"seed", "data-seed"});

  // corrupt
  Common cor_common;
  std::string cor_in, cor_out, cor_kind;
  auto* cor = app.add_subcommand("corrupt", "apply one corruption to every scene of a dataset");
  cor->add_option("--in", cor_in, "input dataset")->required();
  cor->add_option("--out", cor_out, "output dataset")->required();
  cor->add_option("--kind", cor_kind, "corruption kind")->required();
  add_config_flags(cor, cor_common);

  // train-teacher
  Common tt_common;
  std::string tt_train, tt_out, tt_loss;
  bool tt_ego = false;
  auto* tt = app.add_subcommand("train-teacher", "train the early-fusion teacher or the ego-only detector");
  tt->add_option("--train", tt_train, "training dataset (default: generated from the config)");
  tt->add_option("--out", tt_out, "output parameter file")->required();
  tt->add_option("--loss-csv", tt_loss, "loss curve CSV (default: <out>.loss.csv)");
  tt->add_flag("--ego-only", tt_ego, "train the ego-only detector used by the baselines");
  add_config_flags(tt, tt_common);

  // train-student
  Common ts_common;
  std::string ts_train, ts_teacher, ts_out, ts_loss;
  auto* ts = app.add_subcommand("train-student", "train the collaborative student against a frozen teacher");
  ts->add_option("--train", ts_train, "training dataset (default: generated from the config)");
  ts->add_option("--teacher", ts_teacher, "teacher parameter file")->required();
  ts->add_option("--out", ts_out, "output parameter file")->required();
  ts->add_option("--loss-csv", ts_loss, "loss curve CSV (default: <out>.loss.csv)");
  add_config_flags(ts, ts_common);

  // eval
  Common ev_common;
  std::string ev_model = "student", ev_params, ev_data, ev_out, ev_csv, ev_label, ev_dets, ev_svg_dir;
  bool ev_no_corrupt = false, ev_no_pose = false;
  std::size_t ev_svg_scenes = 3;
  auto* ev = app.add_subcommand("eval", "evaluate a model: clean, corrupted and pose-noise AP");
  ev->add_option("--model", ev_model, "teacher | student | no_collab | late_fusion");
  ev->add_option("--params", ev_params, "parameter file")->required();
  ev->add_option("--data", ev_data, "evaluation dataset (default: generated from the config)");
  ev->add_option("--out", ev_out, "report JSON")->required();
  ev->add_option("--csv", ev_csv, "per-condition CSV");
  ev->add_option("--label", ev_label, "model name written into the report");
  ev->add_option("--detections", ev_dets, "clean detections CSV");
  ev->add_option("--svg-dir", ev_svg_dir, "write BEV SVGs of the first scenes here");
  ev->add_option("--svg-scenes", ev_svg_scenes, "number of SVG scenes");
  ev->add_flag("--no-corruptions", ev_no_corrupt, "skip the corruption conditions");
  ev->add_flag("--no-pose-sweep", ev_no_pose, "skip the pose-noise sweep");
  add_config_flags(ev, ev_common);

  // report
  std::vector<std::string> rp_reports;
  std::string rp_summary, rp_pose;
  auto* rp = app.add_subcommand("report", "merge evaluation reports into summary tables");
  rp->add_option("reports", rp_reports, "report JSON files")->required();
  rp->add_option("--summary", rp_summary, "summary CSV (conditions, RCE, mRCE)")->required();
  rp->add_option("--pose", rp_pose, "pose-sweep CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      RunConfig rc = build_config(gen_common);
      if (gen_seed) rc.data_seed = *gen_seed;
      const bool train = gen_split == "train";
      if (gen_scenes) (train ? rc.train_scenes : rc.eval_scenes) = *gen_scenes;
      const Dataset d = train ? make_train_set(rc) : make_eval_set(rc);
      save_dataset(gen_out, d);
      write_manifest("gen-data", args, &rc, {}, {gen_out});
      std::cerr << "wrote " << d.size() << " scenes to " << gen_out << '\n';
    } else if (*cor) {
      const RunConfig rc = build_config(cor_common);
      CorruptionKind kind;
      try {
        kind = parse_corruption(cor_kind);
      } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
      }
      const Dataset d = corrupt_dataset(load_dataset(cor_in), kind, rc.severity, rc.data_seed, rc.threads);
      save_dataset(cor_out, d);
      write_manifest("corrupt", args, &rc, {cor_in}, {cor_out});
    } else if (*tt) {
      const RunConfig rc = build_config(tt_common);
      std::vector<fs::path> inputs;
      const Dataset d = training_data(tt_train, rc, inputs);
      const TrainResult r = train_teacher(d, rc, tt_ego, progress(tt_ego ? "ego" : "teacher"));
      if (tt_loss.empty()) tt_loss = tt_out + ".loss.csv";
      save_params(tt_out, r.params);
      write_file(tt_loss, [&](std::ostream& os) { write_loss_csv(os, r.curve); });
      write_manifest("train-teacher", args, &rc, inputs, {tt_out, tt_loss});
    } else if (*ts) {
      const RunConfig rc = build_config(ts_common);
      std::vector<fs::path> inputs{ts_teacher};
      const ParamSet teacher = load_params(ts_teacher);
      const Dataset d = training_data(ts_train, rc, inputs);
      const TrainResult r = train_student(d, teacher, rc, progress("student"));
      if (ts_loss.empty()) ts_loss = ts_out + ".loss.csv";
      save_params(ts_out, r.params);
      write_file(ts_loss, [&](std::ostream& os) { write_loss_csv(os, r.curve); });
      write_manifest("train-student", args, &rc, inputs, {ts_out, ts_loss});
    } else if (*ev) {
      const RunConfig rc = build_config(ev_common);
      ModelKind kind;
      try {
        kind = parse_model_kind(ev_model);
      } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
      }
      std::vector<fs::path> inputs{ev_params};
      const Model model{kind, load_params(ev_params)};
      Dataset data;
      if (ev_data.empty()) {
        data = make_eval_set(rc);
      } else {
        inputs.emplace_back(ev_data);
        data = load_dataset(ev_data);
      }
      std::vector<std::vector<BoxBEV>> dets;
      EvalOptions opts;
      opts.corruptions = !ev_no_corrupt;
      opts.pose_sweep = !ev_no_pose;
      opts.clean_detections = &dets;
      EvalReport rep = evaluate(model, data, rc, opts);
      if (!ev_label.empty()) rep.model = ev_label;
      std::vector<fs::path> outputs{ev_out};
      write_file(ev_out, [&](std::ostream& os) { write_report_json(os, rep); });
      if (!ev_csv.empty()) {
        write_file(ev_csv, [&](std::ostream& os) { write_report_csv(os, rep); });
        outputs.emplace_back(ev_csv);
      }
      if (!ev_dets.empty()) {
        write_file(ev_dets, [&](std::ostream& os) {
          for (std::size_t i = 0; i < dets.size(); ++i) write_detections_csv(os, i, dets[i], i == 0);
        });
        outputs.emplace_back(ev_dets);
      }
      if (!ev_svg_dir.empty()) {
        for (std::size_t i = 0; i < std::min(ev_svg_scenes, data.size()); ++i) {
          const fs::path p = fs::path(ev_svg_dir) / ("scene_" + std::to_string(i) + ".svg");
          write_file(p, [&](std::ostream& os) { write_scene_svg(os, data[i], dets[i], rc.grid); });
          outputs.push_back(p);
        }
      }
      write_manifest("eval", args, &rc, inputs, outputs);
      std::cerr << rep.model << " clean AP@0.5 " << rep.clean().ap50 << " AP@0.7 " << rep.clean().ap70 << '\n';
    } else if (*rp) {
      std::vector<EvalReport> reports;
      std::vector<fs::path> inputs;
      for (const auto& f : rp_reports) {
        std::ifstream is(f);
        if (!is) throw std::runtime_error("cannot open report '" + f + "'");
        reports.push_back(read_report_json(is));
        inputs.emplace_back(f);
      }
      std::vector<fs::path> outputs{rp_summary};
      write_file(rp_summary, [&](std::ostream& os) { write_summary_csv(os, reports); });
      if (!rp_pose.empty()) {
        write_file(rp_pose, [&](std::ostream& os) { write_pose_csv(os, reports); });
        outputs.emplace_back(rp_pose);
      }
      write_manifest("report", args, nullptr, inputs, outputs);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericFailure& e) {
    std::cerr << "numeric failure at step " << e.step() << ": " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
