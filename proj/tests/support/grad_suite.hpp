#pragma once

// Finite-difference cases for every differentiable operation, shared by the
// unit tests and the acceptance runner. Each case builds a small random
// instance from a seed and returns the worst relative gradient error.

#include "support/gradcheck.hpp"

#include "diffkd/bev_encoder.hpp"
#include "diffkd/diffusion.hpp"
#include "diffkd/fusion.hpp"
#include "diffkd/losses.hpp"
#include "diffkd/pipeline.hpp"

#include <string>
#include <vector>

namespace diffkd::testing {

struct GradCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

inline void randomize(ParamSet& params, std::mt19937_64& rng, double stddev = 0.5) {
  std::normal_distribution<double> n(0.0, stddev);
  for (const auto& [path, entry] : params) {
    Tensor t = entry.value;
    for (std::int64_t i = 0; i < t.numel(); ++i) t.mutable_values()[i] = n(rng);
  }
}

inline std::vector<Tensor> pick(const ParamSet& params, const std::vector<std::string>& paths) {
  std::vector<Tensor> out;
  for (const auto& p : paths) out.push_back(params.at(p));
  return out;
}

inline TargetMap random_targets(std::int64_t H, std::int64_t W, std::mt19937_64& rng, double pos_rate = 0.2) {
  TargetMap t;
  t.H = H;
  t.W = W;
  t.cls = Vector::Zero(H * W);
  t.reg = Vector::Zero(kRegChannels * H * W);
  t.positive.assign(static_cast<std::size_t>(H * W), 0);
  std::bernoulli_distribution pos(pos_rate);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::int64_t i = 0; i < H * W; ++i) {
    if (!pos(rng)) continue;
    t.positive[static_cast<std::size_t>(i)] = 1;
    t.cls[i] = 1.0;
    ++t.num_positive;
    for (int k = 0; k < kRegChannels; ++k) t.reg[k * H * W + i] = n(rng);
  }
  return t;
}

inline PointCloud random_cloud(std::size_t n, double extent, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-extent, extent), z(-1.8, 0.5), in(0.0, 1.0);
  PointCloud c;
  c.num_beams = 8;
  for (std::size_t i = 0; i < n; ++i) {
    LidarPoint p;
    p.x = u(rng);
    p.y = u(rng);
    p.z = z(rng);
    p.intensity = in(rng);
    p.beam_id = static_cast<int>(i % 8);
    p.range = std::hypot(p.x, p.y, p.z);
    c.points.push_back(p);
  }
  return c;
}

inline BEVGridConfig tiny_grid() {
  BEVGridConfig g;
  g.x_min = g.y_min = -4.0;
  g.x_max = g.y_max = 4.0;
  g.H = g.W = 8;
  g.C = 4;
  g.pillar_channels = 4;
  g.norm_groups = 2;
  return g;
}

inline DenoiserConfig tiny_denoiser() {
  DenoiserConfig d;
  d.channels = 4;
  d.width = 4;
  d.groups = 2;
  d.time_dim = 4;
  return d;
}

inline FusionConfig tiny_fusion() {
  FusionConfig f;
  f.channels = 8;
  f.importance_hidden = 3;
  f.reduce_ratio = 4;
  f.groups = 2;
  return f;
}

inline RunConfig tiny_run_config() {
  RunConfig rc;
  rc.grid = tiny_grid();
  rc.denoiser = tiny_denoiser();
  rc.fusion.channels = rc.grid.C;
  rc.fusion.importance_hidden = 3;
  rc.fusion.reduce_ratio = 2;
  rc.fusion.groups = 2;
  rc.schedule_T = 20;
  rc.sample_steps = 4;
  return rc;
}

inline std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  auto reg = [&](std::string name, std::function<GradCheckResult(std::uint64_t)> fn) {
    cases.push_back({std::move(name), std::move(fn)});
  };

  reg("add_broadcast", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    return grad_check([](const auto& x) { return add(x[0], x[1]); },
                      {Tensor::randn({3, 4, 5}, r), Tensor::randn({1, 4, 5}, r)}, s);
  });
  reg("sub_mul_broadcast", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    return grad_check([](const auto& x) { return mul(sub(x[0], x[2]), x[1]); },
                      {Tensor::randn({3, 4, 5}, r), Tensor::randn({1, 4, 5}, r), Tensor::randn({3, 1, 1}, r)}, s);
  });
  reg("relu", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    return grad_check([](const auto& x) { return relu(x[0]); }, {randn_away_from_zero({2, 3, 4}, r)}, s);
  });
  reg("sigmoid_softplus_square", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    return grad_check([](const auto& x) { return sigmoid(x[0]) + softplus(x[0]) * square(x[0]); },
                      {Tensor::randn({2, 3, 4}, r, 2.0)}, s);
  });
  reg("softmax_log_softmax", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    return grad_check([](const auto& x) { return softmax(x[0], 0) * log_softmax(x[0], 2); },
                      {Tensor::randn({3, 2, 4}, r, 2.0)}, s);
  });
  reg("sum_mean_concat", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    return grad_check(
        [](const auto& x) { return square(concat_channels({x[0], x[1]})) * mean(x[0]) + sum(x[1]); },
        {Tensor::randn({2, 3, 3}, r), Tensor::randn({1, 3, 3}, r)}, s);
  });
  reg("conv3x3_dense", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    return grad_check([](const auto& x) { return conv2d(x[0], x[1], x[2], 1, 1); },
                      {Tensor::randn({3, 5, 6}, r), Tensor::randn({4, 3, 3, 3}, r), Tensor::randn({4}, r)}, s);
  });
  reg("conv3x3_stride2", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    return grad_check([](const auto& x) { return conv2d(x[0], x[1], x[2], 2, 1); },
                      {Tensor::randn({2, 6, 6}, r), Tensor::randn({3, 2, 3, 3}, r), Tensor::randn({3}, r)}, s);
  });
  reg("conv1x1", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    return grad_check([](const auto& x) { return conv2d(x[0], x[1], x[2]); },
                      {Tensor::randn({4, 4, 5}, r), Tensor::randn({3, 4, 1, 1}, r), Tensor::randn({3}, r)}, s);
  });
  reg("conv3x3_depthwise", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    return grad_check([](const auto& x) { return conv2d(x[0], x[1], x[2], 1, 1, 4); },
                      {Tensor::randn({4, 5, 5}, r), Tensor::randn({4, 1, 3, 3}, r), Tensor::randn({4}, r)}, s);
  });
  reg("conv3x3_grouped", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    return grad_check([](const auto& x) { return conv2d(x[0], x[1], Tensor(), 1, 1, 2); },
                      {Tensor::randn({4, 4, 4}, r), Tensor::randn({6, 2, 3, 3}, r)}, s);
  });
  reg("group_norm", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    return grad_check([](const auto& x) { return group_norm(x[0], 2, 1e-5, x[1], x[2]); },
                      {Tensor::randn({4, 3, 3}, r, 2.0), Tensor::randn({4}, r), Tensor::randn({4}, r)}, s);
  });
  reg("group_norm_plain", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    return grad_check([](const auto& x) { return group_norm(x[0], 1, 1e-5, Tensor(), Tensor()); },
                      {Tensor::randn({3, 3, 4}, r)}, s);
  });
  reg("upsample_weighted_sum", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    return grad_check(
        [](const auto& x) { return weighted_sum({upsample2x(x[0]), x[1]}, normalized_positive(x[2])); },
        {Tensor::randn({2, 2, 3}, r), Tensor::randn({2, 4, 6}, r), Tensor::randn({2}, r)}, s);
  });
  reg("composed_conv_gn_relu_softmax_kl", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    const Tensor teacher = Tensor::randn({4, 4, 4}, r);
    return grad_check(
        [teacher](const auto& x) {
          Tensor h = relu(group_norm(conv2d(x[0], x[1], Tensor(), 1, 1), 2, 1e-5, Tensor(), Tensor()));
          return channel_kl(log_softmax(h, 0), teacher);
        },
        {Tensor::randn({3, 4, 4}, r), Tensor::randn({4, 3, 3, 3}, r)}, s);
  });

  reg("pillarize_backbone", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    const auto grid = tiny_grid();
    auto params = std::make_shared<ParamSet>();
    init_encoder_params(*params, grid, r);
    randomize(*params, r);
    const PointCloud cloud = random_cloud(60, 3.9, r);
    return grad_check(
        [params, grid, cloud](const auto&) { return encode_cloud(cloud, grid, *params); },
        pick(*params, {"encoder.pillar.weight", "encoder.pillar.bias", "encoder.conv1.weight", "encoder.gn2.scale"}),
        s);
  });
  reg("cam_modulate", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto params = std::make_shared<ParamSet>();
    init_denoiser_params(*params, tiny_denoiser(), r);
    randomize(*params, r);
    return grad_check(
        [params](const auto& x) {
          auto out = cam_modulate(x[0], x[1], *params, "denoiser.l1", 2);
          return concat_channels({out.trunk, upsample2x(out.cond)});
        },
        {Tensor::randn({4, 4, 4}, r), Tensor::randn({4, 4, 4}, r), params->at("denoiser.l1.gate.weight"),
         params->at("denoiser.l1.gamma.weight"), params->at("denoiser.l1.advance.weight")},
        s);
  });
  reg("denoiser_diffusion_loss", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    const auto cfg = tiny_denoiser();
    auto params = std::make_shared<ParamSet>();
    init_denoiser_params(*params, cfg, r);
    randomize(*params, r, 0.4);
    const auto sched = build_schedule(20, 1e-3, 0.2);
    const Tensor eps = Tensor::randn({4, 8, 8}, r);
    const int t = 1 + static_cast<int>(s % 20);
    return grad_check(
        [params, cfg, sched, eps, t](const auto& x) {
          return diffusion_loss(eps, denoiser_forward(x[0], x[1], t, sched, *params, cfg));
        },
        {Tensor::randn({4, 8, 8}, r), Tensor::randn({4, 8, 8}, r), params->at("denoiser.out.weight"),
         params->at("denoiser.fuse_out"), params->at("denoiser.l2.time.weight"), params->at("denoiser.stem.weight")},
        s);
  });
  reg("diffusion_loss", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    return grad_check([](const auto& x) { return diffusion_loss(x[0], x[1]); },
                      {Tensor::randn({3, 4, 4}, r), Tensor::randn({3, 4, 4}, r)}, s);
  });
  reg("importance_softmax_fuse", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    const auto cfg = tiny_fusion();
    auto params = std::make_shared<ParamSet>();
    init_importance_params(*params, cfg, r);
    randomize(*params, r);
    return grad_check(
        [params](const auto& x) {
          std::vector<Tensor> f{x[0], x[1], x[2]};
          return weighted_fuse(agent_softmax(importance_maps(f, *params)), f);
        },
        {Tensor::randn({8, 4, 4}, r), Tensor::randn({8, 4, 4}, r), Tensor::randn({8, 4, 4}, r),
         params->at("importance.conv1.weight"), params->at("importance.conv2.weight")},
        s);
  });
  reg("bottleneck_conv", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto params = std::make_shared<ParamSet>();
    init_bottleneck_params(*params, "b", 8, 8, 4, r);
    randomize(*params, r);
    return grad_check([params](const auto& x) { return bottleneck_conv(x[0], *params, "b"); },
                      {Tensor::randn({8, 4, 4}, r), params->at("b.reduce.weight"), params->at("b.depthwise.weight"),
                       params->at("b.restore.bias")},
                      s);
  });
  reg("lgm", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    const auto cfg = tiny_fusion();
    auto params = std::make_shared<ParamSet>();
    init_lgm_params(*params, cfg, r);
    randomize(*params, r);
    return grad_check([params, cfg](const auto& x) { return lgm(x[0], x[1], *params, cfg); },
                      {Tensor::randn({8, 4, 4}, r), Tensor::randn({8, 4, 4}, r), params->at("lgm.b1.reduce.weight"),
                       params->at("lgm.n4.scale"), params->at("lgm.b4.restore.weight")},
                      s);
  });
  reg("agf_fuse", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    const auto cfg = tiny_fusion();
    auto params = std::make_shared<ParamSet>();
    init_agf_params(*params, cfg, r);
    randomize(*params, r);
    return grad_check(
        [params, cfg](const auto& x) { return agf_fuse({x[0], x[1]}, *params, cfg); },
        {Tensor::randn({8, 4, 4}, r), Tensor::randn({8, 4, 4}, r), params->at("agf.importance.conv1.weight")}, s);
  });
  reg("head", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto params = std::make_shared<ParamSet>();
    init_head_params(*params, 4, r);
    randomize(*params, r);
    return grad_check(
        [params](const auto& x) {
          auto d = head_forward(x[0], *params);
          return concat_channels({d.cls_logits, d.reg});
        },
        {Tensor::randn({4, 3, 3}, r), params->at("head.cls.weight"), params->at("head.reg.bias")}, s);
  });
  reg("focal_loss", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    const TargetMap t = random_targets(5, 5, r);
    return grad_check([t](const auto& x) { return focal_loss(x[0], t); }, {Tensor::randn({1, 5, 5}, r, 3.0)}, s);
  });
  reg("smooth_l1_loss", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    TargetMap t = random_targets(4, 4, r, 0.5);
    if (t.num_positive == 0) t = random_targets(4, 4, r, 1.0);
    // Keep residuals away from the |d| == 1 seam.
    Tensor reg = Tensor::randn({kRegChannels, 4, 4}, r, 1.5);
    for (std::int64_t i = 0; i < reg.numel(); ++i) {
      const double d = reg[i] - t.reg[i];
      if (std::abs(std::abs(d) - 1.0) < 0.05) reg.mutable_values()[i] += 0.1;
    }
    return grad_check([t](const auto& x) { return smooth_l1_loss(x[0], t); }, {reg}, s);
  });
  reg("kd_feat_kl", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    const Tensor teacher = Tensor::randn({5, 3, 3}, r, 2.0);
    return grad_check([teacher](const auto& x) { return kd_feat_loss(x[0], teacher); },
                      {Tensor::randn({5, 3, 3}, r, 2.0)}, s);
  });
  reg("kd_output_kl", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    const DetectionMap teacher{Tensor::randn({1, 3, 3}, r, 3.0), Tensor::randn({kRegChannels, 3, 3}, r)};
    return grad_check(
        [teacher](const auto& x) {
          auto [c, g] = kd_output_loss(DetectionMap{x[0], x[1]}, teacher);
          return concat_channels({c.reshape({1, 1, 1}), g.reshape({1, 1, 1})});
        },
        {Tensor::randn({1, 3, 3}, r, 3.0), Tensor::randn({kRegChannels, 3, 3}, r)}, s);
  });
  reg("student_forward", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto rc = std::make_shared<RunConfig>(tiny_run_config());
    auto teacher = std::make_shared<ParamSet>(init_teacher_params(*rc, s));
    auto student = std::make_shared<ParamSet>(init_student_params(*rc, *teacher, s + 1));
    randomize(*student, r, 0.3);
    auto scene = std::make_shared<Scene>();
    for (int a = 0; a < 2; ++a) {
      AgentView v;
      v.pose = PoseSE2{0.5 * a, -0.3 * a, 0.2 * a};
      v.cloud = random_cloud(50, 3.5, r);
      scene->agents.push_back(v);
    }
    scene->gt_boxes.push_back(BoxBEV{1.1, -0.7, 1.0, 2.0, 0.3, 1.0});
    scene->seed = s;
    // Sampled refinements carry no gradient; holding them fixed keeps the
    // stencil from re-sampling through the denoiser.
    auto refined = std::make_shared<std::vector<Tensor>>();
    for (int a = 0; a < 2; ++a) refined->push_back(Tensor::randn({rc->grid.C, rc->grid.H, rc->grid.W}, r));
    return grad_check(
        [rc, teacher, student, scene, refined](const auto&) {
          return student_step_loss(*scene, *teacher, *student, *rc, 7, refined.get()).total;
        },
        pick(*student, {"head.cls.weight", "agf.lgm.n4.shift", "agf.importance.conv1.weight", "denoiser.out.weight",
                        "encoder.conv2.weight"}),
        s);
  });
  return cases;
}

}  // namespace diffkd::testing
