#include "diffkd/diffusion.hpp"

#include "diffkd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace diffkd {

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > T) {
    throw InvalidArgument("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  }
}

NoiseSchedule build_schedule(int T, double beta_min, double beta_max) {
  if (T < 1) throw InvalidArgument("schedule: T must be >= 1");
  if (!(beta_min > 0.0) || !(beta_max < 1.0) || beta_min > beta_max) {
    throw InvalidArgument("schedule: need 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
  s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
    s.beta[t] = beta_min + frac * (beta_max - beta_min);
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
  }
  return s;
}

Tensor noise_with_alpha_bar(const Tensor& clean, double alpha_bar, const Tensor& eps) {
  if (clean.shape() != eps.shape()) {
    throw InvalidArgument("forward_noise: clean " + shape_str(clean.shape()) + " vs noise " + shape_str(eps.shape()));
  }
  if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw InvalidArgument("forward_noise: alpha_bar outside [0, 1]");
  return add(scale(clean, std::sqrt(alpha_bar)), scale(eps, std::sqrt(1.0 - alpha_bar)));
}

Tensor forward_noise(const Tensor& clean, int t, const Tensor& eps, const NoiseSchedule& schedule) {
  schedule.check_step(t);
  return noise_with_alpha_bar(clean, schedule.alpha_bar[t], eps);
}

void DenoiserConfig::validate() const {
  if (channels <= 0 || width <= 0 || time_dim <= 0 || time_dim % 2 != 0) {
    throw InvalidArgument("denoiser: channels/width must be positive and time_dim even");
  }
  if (groups < 1 || width % groups != 0) throw InvalidArgument("denoiser: width not divisible by groups");
}

namespace {

void add_conv(ParamSet& p, const std::string& name, std::int64_t out, std::int64_t in, std::int64_t k,
              std::mt19937_64& rng, double gain = 1.0) {
  p.add(name + ".weight", kaiming_kernel(out, in, k, rng, gain));
  p.add(name + ".bias", Tensor(Shape{out}, 0.0));
}

void add_norm(ParamSet& p, const std::string& name, std::int64_t c) {
  p.add(name + ".scale", Tensor(Shape{c}, 1.0));
  p.add(name + ".shift", Tensor(Shape{c}, 0.0));
}

Tensor conv(const Tensor& x, const ParamSet& p, const std::string& name, int stride = 1, int padding = -1) {
  const Tensor& w = p.at(name + ".weight");
  if (padding < 0) padding = static_cast<int>(w.dim(3) / 2);
  return conv2d(x, w, p.at(name + ".bias"), stride, padding);
}

Tensor norm_relu(const Tensor& x, const ParamSet& p, const std::string& name, int groups) {
  return relu(group_norm(x, groups, 1e-5, p.at(name + ".scale"), p.at(name + ".shift")));
}

Tensor layer_norm(const Tensor& x) { return group_norm(x, 1, 1e-5, Tensor(), Tensor()); }

}  // namespace

void init_denoiser_params(ParamSet& params, const DenoiserConfig& cfg, std::mt19937_64& rng,
                          const std::string& prefix) {
  cfg.validate();
  const auto C = cfg.channels, D = cfg.width;
  add_conv(params, prefix + ".stem", D, C, 3, rng);
  add_norm(params, prefix + ".stem_gn", D);
  for (int l = 1; l <= 3; ++l) {
    const std::string lv = prefix + ".l" + std::to_string(l);
    add_conv(params, lv + ".down", D, l == 1 ? C : D, 3, rng);
    add_norm(params, lv + ".down_gn", D);
    add_conv(params, lv + ".time", D, cfg.time_dim, 1, rng);
    add_conv(params, lv + ".gamma", D, D, 1, rng);
    add_conv(params, lv + ".beta", D, D, 1, rng);
    params.add(lv + ".gate.weight", Tensor(Shape{D, D, 1, 1}, 0.0));
    params.add(lv + ".gate.bias", Tensor(Shape{D}, 0.0));
    if (l < 3) {
      add_conv(params, lv + ".advance", D, D, 3, rng);
      add_norm(params, lv + ".advance_gn", D);
    }
  }
  for (const char* d : {"dec3", "dec2", "dec1"}) {
    add_conv(params, prefix + "." + d, D, D, 3, rng);
    add_norm(params, prefix + "." + d + "_gn", D);
  }
  params.add(prefix + ".fuse2", Tensor(Shape{2}, 1.0));
  params.add(prefix + ".fuse1", Tensor(Shape{2}, 1.0));
  params.add(prefix + ".fuse_out", Tensor(Shape{3}, 1.0));
  add_conv(params, prefix + ".proj_x", D, C, 1, rng);
  add_conv(params, prefix + ".proj_c", D, C, 1, rng);
  add_conv(params, prefix + ".out", C, D, 1, rng, 0.5);
}

Tensor timestep_embedding(int t, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw InvalidArgument("timestep_embedding: dim must be positive and even");
  const int half = dim / 2;
  Vector v(dim);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    v[k] = std::sin(t * freq);
    v[k + half] = std::cos(t * freq);
  }
  return Tensor(Shape{dim, 1, 1}, std::move(v));
}

CamModulation cam_parameters(const Tensor& cond, const ParamSet& params, const std::string& level) {
  const Tensor n = layer_norm(cond);
  return {conv(n, params, level + ".gamma"), conv(n, params, level + ".beta"), conv(n, params, level + ".gate")};
}

Tensor cam_apply(const Tensor& trunk, const CamModulation& mod) {
  if (trunk.shape() != mod.gate.shape()) {
    throw InvalidArgument("cam: trunk " + shape_str(trunk.shape()) + " vs condition " + shape_str(mod.gate.shape()));
  }
  return trunk + mod.gate * (mod.gamma * layer_norm(trunk) + mod.beta);
}

CamOutput cam_modulate(const Tensor& trunk, const Tensor& cond, const ParamSet& params, const std::string& level,
                       int groups) {
  if (trunk.rank() != 3 || cond.rank() != 3 || trunk.dim(1) != cond.dim(1) || trunk.dim(2) != cond.dim(2)) {
    throw InvalidArgument("cam_modulate: trunk " + shape_str(trunk.shape()) + " and condition " +
                          shape_str(cond.shape()) + " are not spatially aligned");
  }
  CamOutput out;
  out.trunk = cam_apply(trunk, cam_parameters(cond, params, level));
  out.cond = params.contains(level + ".advance.weight")
                 ? norm_relu(conv(cond, params, level + ".advance", 2), params, level + ".advance_gn", groups)
                 : cond;
  return out;
}

ConditionPyramid encode_condition(const Tensor& cond, const ParamSet& params, const DenoiserConfig& cfg,
                                  const std::string& prefix) {
  if (cond.rank() != 3 || cond.dim(0) != cfg.channels || cond.dim(1) % 8 != 0 || cond.dim(2) % 8 != 0) {
    throw InvalidArgument("denoiser: condition " + shape_str(cond.shape()) + " must be " +
                          std::to_string(cfg.channels) + " x H x W with H, W divisible by 8");
  }
  ConditionPyramid pyr;
  pyr.cond_shape = cond.shape();
  pyr.projected = conv(cond, params, prefix + ".proj_c");
  Tensor c = norm_relu(conv(cond, params, prefix + ".stem", 2), params, prefix + ".stem_gn", cfg.groups);
  for (int l = 1; l <= 3; ++l) {
    const std::string lv = prefix + ".l" + std::to_string(l);
    pyr.levels[l - 1] = cam_parameters(c, params, lv);
    if (l < 3) c = norm_relu(conv(c, params, lv + ".advance", 2), params, lv + ".advance_gn", cfg.groups);
  }
  return pyr;
}

Tensor denoiser_forward(const Tensor& noisy, const ConditionPyramid& cond, int t, const NoiseSchedule& schedule,
                        const ParamSet& params, const DenoiserConfig& cfg, const std::string& prefix) {
  schedule.check_step(t);
  if (noisy.shape() != cond.cond_shape) {
    throw InvalidArgument("denoiser: noisy input " + shape_str(noisy.shape()) + " vs condition " +
                          shape_str(cond.cond_shape));
  }
  const Tensor emb = timestep_embedding(t, cfg.time_dim);
  std::array<Tensor, 3> skip;
  Tensor h = noisy;
  for (int l = 1; l <= 3; ++l) {
    const std::string lv = prefix + ".l" + std::to_string(l);
    h = norm_relu(conv(h, params, lv + ".down", 2), params, lv + ".down_gn", cfg.groups);
    h = h + conv(emb, params, lv + ".time");
    h = cam_apply(h, cond.levels[l - 1]);
    skip[l - 1] = h;
  }
  Tensor d = norm_relu(conv(skip[2], params, prefix + ".dec3"), params, prefix + ".dec3_gn", cfg.groups);
  d = weighted_sum({upsample2x(d), skip[1]}, normalized_positive(params.at(prefix + ".fuse2")));
  d = norm_relu(conv(d, params, prefix + ".dec2"), params, prefix + ".dec2_gn", cfg.groups);
  d = weighted_sum({upsample2x(d), skip[0]}, normalized_positive(params.at(prefix + ".fuse1")));
  d = norm_relu(conv(d, params, prefix + ".dec1"), params, prefix + ".dec1_gn", cfg.groups);
  d = weighted_sum({upsample2x(d), conv(noisy, params, prefix + ".proj_x"), cond.projected},
                   normalized_positive(params.at(prefix + ".fuse_out")));
  // The head predicts v; eps = sqrt(1 - abar) x_t + sqrt(abar) v keeps the
  // implied x0 estimate bounded at large t.
  const double ab = schedule.alpha_bar[static_cast<std::size_t>(t)];
  return scale(noisy, std::sqrt(1.0 - ab)) + scale(conv(d, params, prefix + ".out"), std::sqrt(ab));
}

Tensor denoiser_forward(const Tensor& noisy, const Tensor& cond, int t, const NoiseSchedule& schedule,
                        const ParamSet& params, const DenoiserConfig& cfg, const std::string& prefix) {
  return denoiser_forward(noisy, encode_condition(cond, params, cfg, prefix), t, schedule, params, cfg, prefix);
}

Tensor diffusion_loss(const Tensor& eps, const Tensor& eps_hat) {
  if (eps.shape() != eps_hat.shape()) {
    throw InvalidArgument("diffusion_loss: " + shape_str(eps.shape()) + " vs " + shape_str(eps_hat.shape()));
  }
  return mean(square(eps_hat - eps));
}

std::vector<int> ddim_timesteps(int start_t, int steps) {
  if (steps < 1 || steps > start_t) {
    throw InvalidArgument("ddim: sample_steps " + std::to_string(steps) + " outside [1, " +
                          std::to_string(start_t) + "]");
  }
  std::vector<int> ts;
  for (int k = steps; k >= 0; --k) {
    ts.push_back(static_cast<int>(static_cast<std::int64_t>(k) * start_t / steps));
  }
  return ts;
}

Tensor ddim_sample(const Tensor& start, int start_t, int sample_steps, const NoiseSchedule& schedule,
                   const NoisePredictor& predict, const DdimOptions& options) {
  schedule.check_step(start_t);
  const auto ts = ddim_timesteps(start_t, sample_steps);
  NoGradGuard no_grad;
  Vector x = start.values();
  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    const int t = ts[k], prev = ts[k + 1];
    const Tensor eps_hat = predict(Tensor(start.shape(), x), t);
    if (eps_hat.shape() != start.shape()) {
      throw InvalidArgument("ddim: predictor returned " + shape_str(eps_hat.shape()) + " for input " +
                            shape_str(start.shape()));
    }
    const double ab = schedule.alpha_bar[t], ab_prev = schedule.alpha_bar[prev];
    Vector x0 = (x - std::sqrt(1.0 - ab) * eps_hat.values()) / std::sqrt(ab);
    if (options.x0_clip > 0.0) x0 = x0.cwiseMax(-options.x0_clip).cwiseMin(options.x0_clip);
    x = std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps_hat.values();
  }
  return Tensor(start.shape(), std::move(x));
}

Tensor ddim_sample(const Tensor& start, const Tensor& cond, int sample_steps, const NoiseSchedule& schedule,
                   const ParamSet& params, const DenoiserConfig& cfg, const DdimOptions& options,
                   const std::string& prefix) {
  NoGradGuard no_grad;
  const ConditionPyramid pyr = encode_condition(cond, params, cfg, prefix);
  return ddim_sample(
      start, schedule.T, sample_steps, schedule,
      [&](const Tensor& x, int t) { return denoiser_forward(x, pyr, t, schedule, params, cfg, prefix); }, options);
}

RefineResult refine_train(const Tensor& teacher_feature, const Tensor& student_feature,
                          const NoiseSchedule& schedule, const ParamSet& params, const DenoiserConfig& cfg,
                          std::uint64_t seed, int sample_steps, const DdimOptions& options,
                          const std::string& prefix) {
  if (teacher_feature.shape() != student_feature.shape()) {
    throw InvalidArgument("refine_train: teacher " + shape_str(teacher_feature.shape()) + " vs student " +
                          shape_str(student_feature.shape()));
  }
  std::mt19937_64 rng(seed);
  RefineResult r;
  r.t = std::uniform_int_distribution<int>(1, schedule.T)(rng);
  const Tensor eps = Tensor::randn(teacher_feature.shape(), rng);
  const Tensor noisy = forward_noise(teacher_feature.detach(), r.t, eps, schedule);
  const ConditionPyramid pyr = encode_condition(student_feature, params, cfg, prefix);
  const Tensor eps_hat = denoiser_forward(noisy, pyr, r.t, schedule, params, cfg, prefix);
  r.loss = diffusion_loss(eps, eps_hat);
  // The first sampler step sees exactly (noisy, t), so its prediction is reused.
  bool first = true;
  r.refined = ddim_sample(
      noisy, r.t, std::min(sample_steps, r.t), schedule,
      [&](const Tensor& x, int t) {
        if (std::exchange(first, false)) return eps_hat.detach();
        NoGradGuard guard;  // the refined feature is detached anyway
        return denoiser_forward(x, pyr, t, schedule, params, cfg, prefix);
      },
      options);
  return r;
}

Tensor refine_infer(const Tensor& student_feature, const NoiseSchedule& schedule, const ParamSet& params,
                    const DenoiserConfig& cfg, std::uint64_t seed, int sample_steps, const DdimOptions& options,
                    const std::string& prefix) {
  std::mt19937_64 rng(seed);
  const Tensor start = Tensor::randn(student_feature.shape(), rng);
  return ddim_sample(start, student_feature, sample_steps, schedule, params, cfg, options, prefix);
}

}  // namespace diffkd
