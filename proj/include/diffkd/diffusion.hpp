#pragma once

#include "diffkd/param_set.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace diffkd {

/// Linear beta schedule; alpha_bar[0] == 1 and alpha_bar[t] = prod_{s<=t} (1 - beta_s).
struct NoiseSchedule {
  int T = 0;
  double beta_min = 0.0, beta_max = 0.0;
  std::vector<double> beta;       // index 1..T (beta[0] unused, 0)
  std::vector<double> alpha_bar;  // index 0..T

  void check_step(int t) const;
};

NoiseSchedule build_schedule(int T, double beta_min, double beta_max);

/// sqrt(ab) * clean + sqrt(1 - ab) * eps for an explicit alpha_bar in [0, 1].
Tensor noise_with_alpha_bar(const Tensor& clean, double alpha_bar, const Tensor& eps);
/// Forward diffusion to step t (1 <= t <= T).
Tensor forward_noise(const Tensor& clean, int t, const Tensor& eps, const NoiseSchedule& schedule);

struct DenoiserConfig {
  std::int64_t channels = 32;  // feature channels C
  std::int64_t width = 16;     // internal width D
  int groups = 4;              // group-norm groups inside the denoiser
  int time_dim = 16;           // sinusoidal embedding size
  void validate() const;
};

void init_denoiser_params(ParamSet& params, const DenoiserConfig& cfg, std::mt19937_64& rng,
                          const std::string& prefix = "denoiser");

/// Sinusoidal embedding of t as a time_dim x 1 x 1 constant.
Tensor timestep_embedding(int t, int dim);

/// Scale / shift / gate maps generated from a condition feature.
struct CamModulation {
  Tensor gamma, beta, gate;
};

/// LayerNorm(cond) followed by three 1x1 projections. `level` is the
/// parameter prefix of one denoiser level, e.g. "denoiser.l1".
CamModulation cam_parameters(const Tensor& cond, const ParamSet& params, const std::string& level);
Tensor cam_apply(const Tensor& trunk, const CamModulation& mod);

struct CamOutput {
  Tensor trunk;
  Tensor cond;
};

/// trunk + g * (gamma * LayerNorm(trunk) + beta), plus the condition advanced
/// by this level's stride-2 conv block (returned unchanged at the last level).
CamOutput cam_modulate(const Tensor& trunk, const Tensor& cond, const ParamSet& params, const std::string& level,
                       int groups);

/// Everything derived from the condition alone; reusable across sampler steps.
struct ConditionPyramid {
  std::array<CamModulation, 3> levels;
  Tensor projected;  // D x H x W projection of the raw condition
  Shape cond_shape;
};

ConditionPyramid encode_condition(const Tensor& cond, const ParamSet& params, const DenoiserConfig& cfg,
                                  const std::string& prefix = "denoiser");

/// Predicts the injected noise; output has the shape of `noisy`. Levels run at
/// strides 2, 4, 8, so H and W must be divisible by 8.
Tensor denoiser_forward(const Tensor& noisy, const ConditionPyramid& cond, int t, const NoiseSchedule& schedule,
                        const ParamSet& params, const DenoiserConfig& cfg, const std::string& prefix = "denoiser");
Tensor denoiser_forward(const Tensor& noisy, const Tensor& cond, int t, const NoiseSchedule& schedule,
                        const ParamSet& params, const DenoiserConfig& cfg, const std::string& prefix = "denoiser");

/// Mean squared error between predicted and true noise.
Tensor diffusion_loss(const Tensor& eps, const Tensor& eps_hat);

using NoisePredictor = std::function<Tensor(const Tensor& x_t, int t)>;

struct DdimOptions {
  /// Clamp the x0 estimate to [-x0_clip, x0_clip] when positive.
  double x0_clip = 0.0;
};

/// Descending, evenly spaced timesteps from start_t to 0 (steps + 1 entries).
std::vector<int> ddim_timesteps(int start_t, int steps);

/// Deterministic (eta = 0) DDIM from `start` at step start_t down to 0.
/// The result carries no autograd history.
Tensor ddim_sample(const Tensor& start, int start_t, int sample_steps, const NoiseSchedule& schedule,
                   const NoisePredictor& predict, const DdimOptions& options = {});

/// Conditional form starting at t = T.
Tensor ddim_sample(const Tensor& start, const Tensor& cond, int sample_steps, const NoiseSchedule& schedule,
                   const ParamSet& params, const DenoiserConfig& cfg, const DdimOptions& options = {},
                   const std::string& prefix = "denoiser");

struct RefineResult {
  Tensor loss;     // scalar, differentiable w.r.t. denoiser params and F_S
  Tensor refined;  // detached
  int t = 0;
};

/// Training-time refinement: noise F_T at a sampled step, score the noise
/// prediction conditioned on F_S, and denoise back with DDIM.
RefineResult refine_train(const Tensor& teacher_feature, const Tensor& student_feature,
                          const NoiseSchedule& schedule, const ParamSet& params, const DenoiserConfig& cfg,
                          std::uint64_t seed, int sample_steps = 10, const DdimOptions& options = {},
                          const std::string& prefix = "denoiser");

/// Inference-time refinement from pure Gaussian noise; the teacher is not used.
Tensor refine_infer(const Tensor& student_feature, const NoiseSchedule& schedule, const ParamSet& params,
                    const DenoiserConfig& cfg, std::uint64_t seed, int sample_steps = 10,
                    const DdimOptions& options = {}, const std::string& prefix = "denoiser");

}  // namespace diffkd
