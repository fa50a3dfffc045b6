#pragma once

#include "diffkd/corruption.hpp"
#include "diffkd/dataset.hpp"
#include "diffkd/diffusion.hpp"
#include "diffkd/fusion.hpp"
#include "diffkd/losses.hpp"
#include "diffkd/metrics.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace diffkd {

/// Raised when a training loss stops being finite.
class NumericFailure : public std::runtime_error {
 public:
  NumericFailure(const std::string& what, std::int64_t step) : std::runtime_error(what), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

struct RunConfig {
  SceneConfig scene;
  BEVGridConfig grid;
  DenoiserConfig denoiser;
  FusionConfig fusion;

  std::size_t train_scenes = 200;
  std::size_t eval_scenes = 50;
  int epochs = 15;
  int batch_size = 2;
  double lr = 1e-3;

  int schedule_T = 100;
  double beta_min = 1e-3;
  double beta_max = 0.07;
  int sample_steps = 10;        // DDIM steps at inference
  int train_sample_steps = 10;  // DDIM steps for the refined features seen in training
  double x0_clip = 0.0;

  bool use_pkd = true;
  bool use_agf = true;
  bool use_lgm_teacher = true;
  bool pose_noise_on_ego = false;

  std::uint64_t seed = 1;       // model initialisation, shuffling, sampling
  std::uint64_t data_seed = 1;  // dataset generation

  std::vector<CorruptionKind> corruptions{kAllCorruptions.begin(), kAllCorruptions.end()};
  double severity = 0.5;
  std::vector<std::pair<double, double>> pose_sigmas{{0.0, 0.0}, {0.1, 0.1}, {0.2, 0.2}, {0.3, 0.3}, {0.4, 0.4}};

  double score_thresh = 0.05;
  double nms_iou = 0.2;
  unsigned threads = 0;  // 0: DKD_THREADS or hardware

  /// Propagates the grid channel count into the denoiser and fusion configs
  /// and validates everything.
  void finalize();
};

/// Canonical "key = value" text with [sections]; stable across runs.
std::string config_text(const RunConfig& rc);
/// FNV-1a of config_text with the thread count zeroed.
std::uint64_t config_hash(const RunConfig& rc);

NoiseSchedule make_schedule(const RunConfig& rc);

/// Train / eval splits drawn from independent seed streams.
Dataset make_train_set(const RunConfig& rc);
Dataset make_eval_set(const RunConfig& rc);

// Parameter layouts --------------------------------------------------------
// teacher / ego detector: encoder.*, head.*, and lgm.* when LGM is enabled.
// student: encoder.*, head.* (warm-started from the teacher), agf.importance.*,
// agf.lgm.* when AGF is enabled, denoiser.* when PKD is enabled.
ParamSet init_teacher_params(const RunConfig& rc, std::uint64_t seed, bool with_lgm = true);
ParamSet init_student_params(const RunConfig& rc, const ParamSet& teacher, std::uint64_t seed);

struct TeacherOutput {
  Tensor feature;       // F_T
  Tensor feature_star;  // F_T^* (== F_T without LGM)
  DetectionMap det;
};

/// Encoder, optional self-conditioned LGM, head.
TeacherOutput detector_forward(const PointCloud& cloud, const ParamSet& params, const RunConfig& rc);

/// Detection loss of the early-fusion teacher (or the ego-only detector).
ComposedLoss teacher_step_loss(const Scene& scene, const ParamSet& params, const RunConfig& rc, bool ego_only);

/// Full student objective for one scene. `fixed_refined` substitutes the
/// sampled refined features (they carry no gradient either way);
/// `teacher_out` supplies a precomputed teacher pass on the merged cloud.
ComposedLoss student_step_loss(const Scene& scene, const ParamSet& teacher, const ParamSet& student,
                               const RunConfig& rc, std::uint64_t seed,
                               const std::vector<Tensor>* fixed_refined = nullptr,
                               const TeacherOutput* teacher_out = nullptr);

struct TrainResult {
  ParamSet params;
  std::vector<LossBundle> curve;  // one entry per optimizer step (batch mean)
};

using StepHook = std::function<void(std::int64_t step, const LossBundle&)>;

/// Early-fusion teacher (ego_only = false) or ego-only detector (true, no LGM).
TrainResult train_teacher(const Dataset& data, const RunConfig& rc, bool ego_only = false,
                          const StepHook& hook = {});
TrainResult train_student(const Dataset& data, const ParamSet& teacher, const RunConfig& rc,
                          const StepHook& hook = {});

void write_loss_csv(std::ostream& os, const std::vector<LossBundle>& curve);

// Inference -----------------------------------------------------------------

/// Collaborator poses, optionally perturbed: one pose per agent.
std::vector<PoseSE2> perturbed_poses(const Scene& scene, double sigma_loc, double sigma_head, std::uint64_t seed,
                                     bool include_ego);

enum class ModelKind { teacher, student, no_collab, late_fusion };
std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

struct Model {
  ModelKind kind = ModelKind::student;
  ParamSet params;
};

/// Student per-agent features in the ego frame (refined when PKD is on).
std::vector<Tensor> student_agent_features(const Scene& scene, const ParamSet& student, const RunConfig& rc,
                                           const std::vector<PoseSE2>& poses);
Tensor student_fused_feature(const Scene& scene, const ParamSet& student, const RunConfig& rc,
                             const std::vector<PoseSE2>& poses);

std::vector<BoxBEV> detect(const Model& model, const Scene& scene, const RunConfig& rc,
                           const std::vector<PoseSE2>& poses);

// Evaluation ----------------------------------------------------------------

struct ConditionResult {
  std::string condition;  // "clean" or a corruption name
  double ap50 = 0.0, ap70 = 0.0;
};

struct PoseRow {
  double sigma_loc = 0.0, sigma_head = 0.0;
  double ap50 = 0.0, ap70 = 0.0;
};

struct EvalReport {
  std::string model;
  std::vector<ConditionResult> conditions;  // clean first
  std::optional<Robustness> robustness;
  std::vector<PoseRow> pose_sweep;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0, data_seed = 0;
  double severity = 0.0;

  const ConditionResult& clean() const;
  double mean_corrupted_ap70() const;
  double mean_corrupted_ap50() const;
};

struct EvalOptions {
  bool corruptions = true;
  bool pose_sweep = true;
  /// When set, receives per-scene clean detections.
  std::vector<std::vector<BoxBEV>>* clean_detections = nullptr;
};

/// Corrupts every scene; per-scene seeds derive from (data_seed, scene seed, kind).
Dataset corrupt_dataset(const Dataset& data, CorruptionKind kind, double severity, std::uint64_t data_seed,
                        unsigned threads = 0);

std::pair<double, double> evaluate_condition(const Model& model, const Dataset& data, const RunConfig& rc,
                                             std::vector<std::vector<BoxBEV>>* detections = nullptr);

EvalReport evaluate(const Model& model, const Dataset& data, const RunConfig& rc, const EvalOptions& options = {});

/// Pose-noise sweep over rc.pose_sigmas; the (0, 0) row equals the clean evaluation.
std::vector<PoseRow> pose_sweep(const Model& model, const Dataset& data, const RunConfig& rc);

void write_report_json(std::ostream& os, const EvalReport& report);
EvalReport read_report_json(std::istream& is);
/// One row per condition plus RCE/mRCE summary rows.
void write_report_csv(std::ostream& os, const EvalReport& report);
/// Table-shaped summary over several reports: one row per model with the
/// eight condition columns (AP@0.5/AP@0.7) and the robustness columns.
void write_summary_csv(std::ostream& os, const std::vector<EvalReport>& reports);
void write_pose_csv(std::ostream& os, const std::vector<EvalReport>& reports);

/// Minimal SVG of ground truth vs detections for one scene.
void write_scene_svg(std::ostream& os, const Scene& scene, const std::vector<BoxBEV>& detections,
                     const BEVGridConfig& grid);

}  // namespace diffkd
