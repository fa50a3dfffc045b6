#include "diffkd/pipeline.hpp"

#include "diffkd/ops.hpp"
#include "diffkd/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace diffkd {

namespace {

constexpr std::uint64_t kTrainStream = 0x747261696e;
constexpr std::uint64_t kEvalStream = 0x6576616c;
constexpr std::uint64_t kCorruptStream = 0x636f7272;
constexpr std::uint64_t kPoseStream = 0x706f7365;
constexpr std::uint64_t kRefineStream = 0x72656669;

constexpr const char* kApProtocol = "41-point interpolated AP; greedy score-ordered matching, rotated IoU";

bool has_pkd(const ParamSet& student) { return student.contains("denoiser.out.weight"); }
bool has_agf(const ParamSet& student) { return student.contains("agf.importance.conv1.weight"); }
bool has_lgm(const ParamSet& detector) { return detector.contains("lgm.b1.reduce.weight"); }

DdimOptions ddim_options(const RunConfig& rc) { return DdimOptions{rc.x0_clip}; }

void add_bundle(LossBundle& acc, const LossBundle& b, double w) {
  acc.l_diff_sum += w * b.l_diff_sum;
  acc.l_kd_feat += w * b.l_kd_feat;
  acc.l_kd_cls += w * b.l_kd_cls;
  acc.l_kd_reg += w * b.l_kd_reg;
  acc.l_cls += w * b.l_cls;
  acc.l_reg += w * b.l_reg;
}

std::vector<PoseSE2> true_poses(const Scene& scene) {
  std::vector<PoseSE2> p;
  for (const auto& a : scene.agents) p.push_back(a.pose);
  return p;
}

using StepFn = std::function<ComposedLoss(std::size_t scene_index, std::uint64_t seed)>;

// Gradient-averaged mini-batches; the step function reads `params` by handle.
std::vector<LossBundle> train_loop(const Dataset& data, ParamSet& params, const RunConfig& rc, std::uint64_t stream,
                                   const StepFn& step_fn, const StepHook& hook) {
  if (data.empty()) throw InvalidArgument("training dataset is empty");
  std::vector<LossBundle> curve;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(rc.seed, stream));
  const auto bs = static_cast<std::size_t>(rc.batch_size);
  std::int64_t step = 0;
  for (int epoch = 0; epoch < rc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::size_t n = std::min(bs, order.size() - b);
      LossBundle mean;
      for (std::size_t k = 0; k < n; ++k) {
        const std::uint64_t s = mix_seed(rc.seed, stream, static_cast<std::uint64_t>(step) * bs + k);
        ComposedLoss c = step_fn(order[b + k], s);
        if (!std::isfinite(c.values.l_final)) {
          throw NumericFailure("non-finite loss at step " + std::to_string(step), step);
        }
        scale(c.total, 1.0 / static_cast<double>(n)).backward();
        add_bundle(mean, c.values, 1.0 / static_cast<double>(n));
      }
      adam_step(params, rc.lr);
      mean = compose_losses(mean.l_diff_sum, mean.l_kd_feat, mean.l_kd_cls, mean.l_kd_reg, mean.l_cls, mean.l_reg);
      curve.push_back(mean);
      if (hook) hook(step, mean);
      ++step;
    }
  }
  return curve;
}

}  // namespace

void RunConfig::finalize() {
  scene.validate();
  grid.validate();
  denoiser.channels = grid.C;
  fusion.channels = grid.C;
  denoiser.validate();
  fusion.validate();
  if (grid.H % 8 != 0 || grid.W % 8 != 0) throw InvalidArgument("grid H and W must be divisible by 8");
  if (epochs < 1 || batch_size < 1) throw InvalidArgument("epochs and batch_size must be >= 1");
  if (!(lr > 0.0)) throw InvalidArgument("lr must be positive");
  if (sample_steps < 1 || sample_steps > schedule_T || train_sample_steps < 1 || train_sample_steps > schedule_T) {
    throw InvalidArgument("sample_steps and train_sample_steps must lie in [1, T]");
  }
  build_schedule(schedule_T, beta_min, beta_max);
  if (!(severity >= 0.0 && severity <= 1.0)) throw InvalidArgument("severity must lie in [0, 1]");
  for (const auto& [l, h] : pose_sigmas) {
    if (l < 0.0 || h < 0.0) throw InvalidArgument("pose sigmas must be non-negative");
  }
  if (!(score_thresh >= 0.0 && score_thresh <= 1.0) || !(nms_iou >= 0.0 && nms_iou <= 1.0)) {
    throw InvalidArgument("score_thresh and nms_iou must lie in [0, 1]");
  }
}

NoiseSchedule make_schedule(const RunConfig& rc) { return build_schedule(rc.schedule_T, rc.beta_min, rc.beta_max); }

Dataset make_train_set(const RunConfig& rc) {
  return generate_dataset(rc.scene, rc.train_scenes, mix_seed(rc.data_seed, kTrainStream), rc.threads);
}

Dataset make_eval_set(const RunConfig& rc) {
  return generate_dataset(rc.scene, rc.eval_scenes, mix_seed(rc.data_seed, kEvalStream), rc.threads);
}

ParamSet init_teacher_params(const RunConfig& rc, std::uint64_t seed, bool with_lgm) {
  std::mt19937_64 rng(mix_seed(seed, 1));
  ParamSet p;
  init_encoder_params(p, rc.grid, rng);
  init_head_params(p, rc.grid.C, rng);
  if (with_lgm) {
    FusionConfig f = rc.fusion;
    f.channels = rc.grid.C;
    init_lgm_params(p, f, rng, "lgm");
  }
  return p;
}

ParamSet init_student_params(const RunConfig& rc, const ParamSet& teacher, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 2));
  ParamSet p;
  init_encoder_params(p, rc.grid, rng);
  init_head_params(p, rc.grid.C, rng);
  p.copy_values_from(teacher, "encoder.");
  p.copy_values_from(teacher, "head.");
  FusionConfig f = rc.fusion;
  f.channels = rc.grid.C;
  if (rc.use_agf) init_agf_params(p, f, rng, "agf");
  if (rc.use_pkd) {
    DenoiserConfig d = rc.denoiser;
    d.channels = rc.grid.C;
    init_denoiser_params(p, d, rng);
  }
  return p;
}

TeacherOutput detector_forward(const PointCloud& cloud, const ParamSet& params, const RunConfig& rc) {
  TeacherOutput out;
  out.feature = encode_cloud(cloud, rc.grid, params);
  out.feature_star = has_lgm(params) ? lgm(out.feature, out.feature, params, rc.fusion, "lgm") : out.feature;
  out.det = head_forward(out.feature_star, params);
  return out;
}

ComposedLoss teacher_step_loss(const Scene& scene, const ParamSet& params, const RunConfig& rc, bool ego_only) {
  const PointCloud cloud = ego_only ? aligned_cloud(scene, 0) : merged_cloud(scene);
  const TeacherOutput out = detector_forward(cloud, params, rc);
  const TargetMap targets = assign_targets(scene.gt_boxes, rc.grid);
  LossParts parts;
  parts.cls = focal_loss(out.det.cls_logits, targets);
  parts.reg = smooth_l1_loss(out.det.reg, targets);
  return compose_losses(parts);
}

ComposedLoss student_step_loss(const Scene& scene, const ParamSet& teacher, const ParamSet& student,
                               const RunConfig& rc, std::uint64_t seed, const std::vector<Tensor>* fixed_refined,
                               const TeacherOutput* teacher_out) {
  if (scene.agents.empty()) throw InvalidArgument("scene has no agents");
  const bool pkd = has_pkd(student);
  TeacherOutput t;
  if (pkd) {
    NoGradGuard guard;
    t = teacher_out ? *teacher_out : detector_forward(merged_cloud(scene), teacher, rc);
    if (t.feature.shape() != Shape{rc.grid.C, rc.grid.H, rc.grid.W}) {
      throw InvalidArgument("teacher feature " + shape_str(t.feature.shape()) + " does not match the student grid");
    }
  }
  std::vector<Tensor> feats;
  for (std::size_t i = 0; i < scene.agents.size(); ++i) {
    feats.push_back(encode_cloud(aligned_cloud(scene, i), rc.grid, student));
  }
  LossParts parts;
  std::vector<Tensor> inputs = feats;
  if (pkd) {
    if (fixed_refined && fixed_refined->size() != feats.size()) {
      throw InvalidArgument("fixed refined features: count does not match agents");
    }
    const NoiseSchedule sched = make_schedule(rc);
    for (std::size_t i = 0; i < feats.size(); ++i) {
      RefineResult r = refine_train(t.feature, feats[i], sched, student, rc.denoiser, mix_seed(seed, kRefineStream, i),
                                    rc.train_sample_steps, ddim_options(rc));
      parts.diff_sum = parts.diff_sum.defined() ? parts.diff_sum + r.loss : r.loss;
      inputs[i] = fixed_refined ? (*fixed_refined)[i] : r.refined;
    }
  }
  const Tensor fused = has_agf(student) ? agf_fuse(inputs, student, rc.fusion, "agf") : mean_fuse(inputs);
  const DetectionMap det = head_forward(fused, student);
  const TargetMap targets = assign_targets(scene.gt_boxes, rc.grid);
  parts.cls = focal_loss(det.cls_logits, targets);
  parts.reg = smooth_l1_loss(det.reg, targets);
  if (pkd) {
    parts.kd_feat = kd_feat_loss(fused, t.feature_star);
    std::tie(parts.kd_cls, parts.kd_reg) = kd_output_loss(det, t.det);
  }
  return compose_losses(parts);
}

TrainResult train_teacher(const Dataset& data, const RunConfig& rc, bool ego_only, const StepHook& hook) {
  const bool lgm_on = rc.use_lgm_teacher && !ego_only;
  TrainResult res;
  res.params = init_teacher_params(rc, mix_seed(rc.seed, ego_only ? 11 : 10), lgm_on);
  const ParamSet& live = res.params;
  res.curve = train_loop(
      data, res.params, rc, ego_only ? 0x65676fULL : 0x746561ULL,
      [&](std::size_t i, std::uint64_t) { return teacher_step_loss(data[i], live, rc, ego_only); }, hook);
  return res;
}

TrainResult train_student(const Dataset& data, const ParamSet& teacher, const RunConfig& rc, const StepHook& hook) {
  TrainResult res;
  res.params = init_student_params(rc, teacher, mix_seed(rc.seed, 12));
  // The teacher is frozen, so its pass over each training scene is computed once.
  std::vector<TeacherOutput> cache;
  if (rc.use_pkd) {
    cache.resize(data.size());
    parallel_for(data.size(), rc.threads, [&](std::size_t i) {
      NoGradGuard guard;
      cache[i] = detector_forward(merged_cloud(data[i]), teacher, rc);
    });
  }
  const ParamSet& live = res.params;
  res.curve = train_loop(
      data, res.params, rc, 0x737475ULL,
      [&](std::size_t i, std::uint64_t seed) {
        return student_step_loss(data[i], teacher, live, rc, seed, nullptr, cache.empty() ? nullptr : &cache[i]);
      },
      hook);
  return res;
}

void write_loss_csv(std::ostream& os, const std::vector<LossBundle>& curve) {
  os << "step,l_diff_sum,l_kd_feat,l_kd_cls,l_kd_reg,l_kd_post,l_pkd,l_cls,l_reg,l_final\n";
  os << std::setprecision(10);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const auto& b = curve[i];
    os << i << ',' << b.l_diff_sum << ',' << b.l_kd_feat << ',' << b.l_kd_cls << ',' << b.l_kd_reg << ','
       << b.l_kd_post << ',' << b.l_pkd << ',' << b.l_cls << ',' << b.l_reg << ',' << b.l_final << '\n';
  }
}

std::vector<PoseSE2> perturbed_poses(const Scene& scene, double sigma_loc, double sigma_head, std::uint64_t seed,
                                     bool include_ego) {
  std::vector<PoseSE2> poses = true_poses(scene);
  if (sigma_loc == 0.0 && sigma_head == 0.0) return poses;
  for (std::size_t i = include_ego ? 0 : 1; i < poses.size(); ++i) {
    poses[i] = inject_pose_noise(poses[i], sigma_loc, sigma_head, mix_seed(seed, i));
  }
  return poses;
}

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::teacher: return "teacher";
    case ModelKind::student: return "student";
    case ModelKind::no_collab: return "no_collab";
    case ModelKind::late_fusion: return "late_fusion";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  for (auto k : {ModelKind::teacher, ModelKind::student, ModelKind::no_collab, ModelKind::late_fusion}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidArgument("unknown model kind '" + std::string(name) +
                        "' (expected teacher, student, no_collab or late_fusion)");
}

std::vector<Tensor> student_agent_features(const Scene& scene, const ParamSet& student, const RunConfig& rc,
                                           const std::vector<PoseSE2>& poses) {
  if (poses.size() != scene.agents.size()) throw InvalidArgument("one pose per agent is required");
  NoGradGuard guard;
  std::vector<Tensor> feats;
  const bool pkd = has_pkd(student);
  const NoiseSchedule sched = make_schedule(rc);
  for (std::size_t i = 0; i < scene.agents.size(); ++i) {
    Tensor f = encode_cloud(aligned_cloud(scene, i, &poses[i]), rc.grid, student);
    if (pkd) {
      f = refine_infer(f, sched, student, rc.denoiser, mix_seed(rc.seed, kRefineStream, mix_seed(scene.seed, i)),
                       rc.sample_steps, ddim_options(rc));
    }
    feats.push_back(f);
  }
  return feats;
}

Tensor student_fused_feature(const Scene& scene, const ParamSet& student, const RunConfig& rc,
                             const std::vector<PoseSE2>& poses) {
  const auto feats = student_agent_features(scene, student, rc, poses);
  NoGradGuard guard;
  return has_agf(student) ? agf_fuse(feats, student, rc.fusion, "agf") : mean_fuse(feats);
}

std::vector<BoxBEV> detect(const Model& model, const Scene& scene, const RunConfig& rc,
                           const std::vector<PoseSE2>& poses) {
  if (poses.size() != scene.agents.size()) throw InvalidArgument("one pose per agent is required");
  NoGradGuard guard;
  auto run = [&](const DetectionMap& det) { return decode_and_nms(det, rc.grid, rc.score_thresh, rc.nms_iou); };
  switch (model.kind) {
    case ModelKind::teacher: return run(detector_forward(merged_cloud(scene, &poses), model.params, rc).det);
    case ModelKind::no_collab:
      return run(detector_forward(aligned_cloud(scene, 0, &poses[0]), model.params, rc).det);
    case ModelKind::late_fusion: {
      std::vector<BoxBEV> all;
      for (std::size_t i = 0; i < scene.agents.size(); ++i) {
        auto boxes = run(detector_forward(aligned_cloud(scene, i, &poses[i]), model.params, rc).det);
        all.insert(all.end(), boxes.begin(), boxes.end());
      }
      return nms(std::move(all), rc.nms_iou);
    }
    case ModelKind::student:
      return run(head_forward(student_fused_feature(scene, model.params, rc, poses), model.params));
  }
  throw InvalidArgument("unhandled model kind");
}

namespace {

std::pair<double, double> evaluate_with_poses(const Model& model, const Dataset& data, const RunConfig& rc,
                                              const std::function<std::vector<PoseSE2>(const Scene&)>& poses_of,
                                              std::vector<std::vector<BoxBEV>>* detections) {
  std::vector<SceneDetections> scenes(data.size());
  parallel_for(data.size(), rc.threads, [&](std::size_t i) {
    scenes[i].preds = detect(model, data[i], rc, poses_of(data[i]));
    scenes[i].gts = data[i].gt_boxes;
  });
  if (detections) {
    detections->clear();
    for (auto& s : scenes) detections->push_back(s.preds);
  }
  return {average_precision(scenes, 0.5), average_precision(scenes, 0.7)};
}

}  // namespace

Dataset corrupt_dataset(const Dataset& data, CorruptionKind kind, double severity, std::uint64_t data_seed,
                        unsigned threads) {
  Dataset out(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const auto seed = mix_seed(data_seed, kCorruptStream, mix_seed(data[i].seed, static_cast<std::uint64_t>(kind)));
    out[i] = corrupt_scene(data[i], kind, severity, seed);
  });
  return out;
}

std::pair<double, double> evaluate_condition(const Model& model, const Dataset& data, const RunConfig& rc,
                                             std::vector<std::vector<BoxBEV>>* detections) {
  return evaluate_with_poses(model, data, rc, true_poses, detections);
}

std::vector<PoseRow> pose_sweep(const Model& model, const Dataset& data, const RunConfig& rc) {
  std::vector<PoseRow> rows;
  for (const auto& [l, h] : rc.pose_sigmas) {
    auto poses_of = [&, l = l, h = h](const Scene& s) {
      return perturbed_poses(s, l, h, mix_seed(rc.data_seed, kPoseStream, s.seed), rc.pose_noise_on_ego);
    };
    const auto [ap50, ap70] = evaluate_with_poses(model, data, rc, poses_of, nullptr);
    rows.push_back({l, h, ap50, ap70});
  }
  return rows;
}

EvalReport evaluate(const Model& model, const Dataset& data, const RunConfig& rc, const EvalOptions& options) {
  EvalReport rep;
  rep.model = std::string(to_string(model.kind));
  rep.config_hash = config_hash(rc);
  rep.seed = rc.seed;
  rep.data_seed = rc.data_seed;
  rep.severity = rc.severity;
  const auto clean = evaluate_condition(model, data, rc, options.clean_detections);
  rep.conditions.push_back({"clean", clean.first, clean.second});
  if (options.corruptions && !rc.corruptions.empty()) {
    std::vector<std::pair<double, double>> corrupted;
    for (auto kind : rc.corruptions) {
      const auto ap = evaluate_condition(model, corrupt_dataset(data, kind, rc.severity, rc.data_seed, rc.threads), rc);
      rep.conditions.push_back({std::string(to_string(kind)), ap.first, ap.second});
      corrupted.push_back(ap);
    }
    try {
      rep.robustness = compute_rce_mrce(clean, corrupted);
    } catch (const UndefinedMetric&) {
      rep.robustness.reset();
    }
  }
  if (options.pose_sweep) rep.pose_sweep = pose_sweep(model, data, rc);
  return rep;
}

const ConditionResult& EvalReport::clean() const {
  if (conditions.empty() || conditions.front().condition != "clean") {
    throw PreconditionError("report has no clean condition");
  }
  return conditions.front();
}

double EvalReport::mean_corrupted_ap70() const {
  if (conditions.size() < 2) throw PreconditionError("report has no corrupted conditions");
  double s = 0.0;
  for (std::size_t i = 1; i < conditions.size(); ++i) s += conditions[i].ap70;
  return s / static_cast<double>(conditions.size() - 1);
}

double EvalReport::mean_corrupted_ap50() const {
  if (conditions.size() < 2) throw PreconditionError("report has no corrupted conditions");
  double s = 0.0;
  for (std::size_t i = 1; i < conditions.size(); ++i) s += conditions[i].ap50;
  return s / static_cast<double>(conditions.size() - 1);
}

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v;
  return os.str();
}

}  // namespace

void write_report_json(std::ostream& os, const EvalReport& report) {
  nlohmann::ordered_json j;
  j["model"] = report.model;
  j["ap_protocol"] = kApProtocol;
  j["config_hash"] = hex64(report.config_hash);
  j["seed"] = report.seed;
  j["data_seed"] = report.data_seed;
  j["severity"] = report.severity;
  j["conditions"] = nlohmann::ordered_json::array();
  for (const auto& c : report.conditions) {
    j["conditions"].push_back({{"condition", c.condition}, {"ap50", c.ap50}, {"ap70", c.ap70}});
  }
  if (report.robustness) {
    j["robustness"] = {
        {"rce50", report.robustness->rce50}, {"rce70", report.robustness->rce70}, {"mrce", report.robustness->mrce}};
  } else {
    j["robustness"] = nullptr;
  }
  j["pose_sweep"] = nlohmann::ordered_json::array();
  for (const auto& r : report.pose_sweep) {
    j["pose_sweep"].push_back(
        {{"sigma_loc", r.sigma_loc}, {"sigma_head", r.sigma_head}, {"ap50", r.ap50}, {"ap70", r.ap70}});
  }
  os << j.dump(2) << '\n';
}

EvalReport read_report_json(std::istream& is) {
  EvalReport rep;
  try {
    const auto j = nlohmann::json::parse(is);
    rep.model = j.at("model").get<std::string>();
    rep.config_hash = parse_hex64(j.at("config_hash").get<std::string>());
    rep.seed = j.at("seed").get<std::uint64_t>();
    rep.data_seed = j.at("data_seed").get<std::uint64_t>();
    rep.severity = j.at("severity").get<double>();
    for (const auto& c : j.at("conditions")) {
      rep.conditions.push_back({c.at("condition").get<std::string>(), c.at("ap50").get<double>(),
                                c.at("ap70").get<double>()});
    }
    if (!j.at("robustness").is_null()) {
      const auto& r = j.at("robustness");
      rep.robustness = Robustness{r.at("rce50").get<double>(), r.at("rce70").get<double>(), r.at("mrce").get<double>()};
    }
    for (const auto& r : j.at("pose_sweep")) {
      rep.pose_sweep.push_back({r.at("sigma_loc").get<double>(), r.at("sigma_head").get<double>(),
                                r.at("ap50").get<double>(), r.at("ap70").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed report: ") + e.what());
  }
  return rep;
}

void write_report_csv(std::ostream& os, const EvalReport& report) {
  os << "model,condition,ap50,ap70\n" << std::setprecision(10);
  for (const auto& c : report.conditions) os << report.model << ',' << c.condition << ',' << c.ap50 << ',' << c.ap70 << '\n';
  if (report.robustness) {
    os << report.model << ",rce," << report.robustness->rce50 << ',' << report.robustness->rce70 << '\n';
    os << report.model << ",mrce," << report.robustness->mrce << ',' << report.robustness->mrce << '\n';
  }
}

void write_summary_csv(std::ostream& os, const std::vector<EvalReport>& reports) {
  // Column order follows the first report that carries each condition.
  std::vector<std::string> columns;
  for (const auto& r : reports) {
    for (const auto& c : r.conditions) {
      if (std::find(columns.begin(), columns.end(), c.condition) == columns.end()) columns.push_back(c.condition);
    }
  }
  os << "model";
  for (const auto& c : columns) os << ',' << c;
  os << ",rce50,rce70,mrce\n";
  for (const auto& r : reports) {
    os << r.model;
    for (const auto& col : columns) {
      os << ',';
      for (const auto& c : r.conditions) {
        if (c.condition == col) os << pct(c.ap50) << '/' << pct(c.ap70);
      }
    }
    if (r.robustness) {
      os << ',' << pct(r.robustness->rce50) << ',' << pct(r.robustness->rce70) << ',' << pct(r.robustness->mrce);
    } else {
      os << ",,,";
    }
    os << '\n';
  }
}

void write_pose_csv(std::ostream& os, const std::vector<EvalReport>& reports) {
  os << "model,sigma_loc,sigma_head,ap50,ap70\n" << std::setprecision(10);
  for (const auto& r : reports) {
    for (const auto& p : r.pose_sweep) {
      os << r.model << ',' << p.sigma_loc << ',' << p.sigma_head << ',' << p.ap50 << ',' << p.ap70 << '\n';
    }
  }
}

void write_scene_svg(std::ostream& os, const Scene& scene, const std::vector<BoxBEV>& detections,
                     const BEVGridConfig& grid) {
  constexpr double kPx = 10.0;  // pixels per metre
  const double w = (grid.x_max - grid.x_min) * kPx;
  const double h = (grid.y_max - grid.y_min) * kPx;
  // x to the right, y up.
  auto sx = [&](double x) { return (x - grid.x_min) * kPx; };
  auto sy = [&](double y) { return (grid.y_max - y) * kPx; };
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const PointCloud cloud = merged_cloud(scene);
  for (std::size_t i = 0; i < cloud.points.size(); i += 4) {
    const auto& p = cloud.points[i];
    if (p.tag == SurfaceTag::ground) continue;
    if (p.x < grid.x_min || p.x > grid.x_max || p.y < grid.y_min || p.y > grid.y_max) continue;
    os << "<circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.y) << "\" r=\"1\" fill=\"#888\"/>\n";
  }
  auto poly = [&](const BoxBEV& b, const char* color) {
    os << "<polygon fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& c : b.corners()) os << sx(c.x()) << ',' << sy(c.y()) << ' ';
    os << "\"/>\n";
  };
  for (const auto& b : scene.gt_boxes) poly(b, "green");
  for (const auto& b : detections) poly(b, "red");
  for (const auto& a : scene.agents) {
    const Eigen::Vector2d p = scene.agents.front().pose.apply_inverse(Eigen::Vector2d(a.pose.x, a.pose.y));
    os << "<circle cx=\"" << sx(p.x()) << "\" cy=\"" << sy(p.y()) << "\" r=\"4\" fill=\"blue\"/>\n";
  }
  os << "</svg>\n";
}

}  // namespace diffkd
