#include "diffkd/fusion.hpp"

#include "diffkd/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace diffkd {

namespace {

constexpr int kMaxAgents = 64;

void check_grid(const std::vector<Tensor>& features, const char* who) {
  if (features.empty()) throw InvalidArgument(std::string(who) + ": no agent features");
  for (const auto& f : features) {
    if (f.rank() != 3 || f.shape() != features[0].shape()) {
      throw InvalidArgument(std::string(who) + ": feature " + shape_str(f.shape()) + " does not match ego " +
                            shape_str(features[0].shape()));
    }
  }
  if (features.size() > kMaxAgents) throw InvalidArgument(std::string(who) + ": too many agents");
}

// Sum of a small set of terms in ascending order; independent of input order.
double sorted_sum(double* terms, std::size_t n) {
  std::sort(terms, terms + n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += terms[i];
  return s;
}

Tensor norm(const Tensor& x, const ParamSet& p, const std::string& name, int groups) {
  return group_norm(x, groups, 1e-5, p.at(name + ".scale"), p.at(name + ".shift"));
}

}  // namespace

void FusionConfig::validate() const {
  if (channels <= 0 || importance_hidden <= 0 || reduce_ratio <= 0 || channels % reduce_ratio != 0) {
    throw InvalidArgument("fusion: channels must be positive and divisible by reduce_ratio");
  }
  if (groups < 1 || channels % groups != 0) {
    throw InvalidArgument("fusion: channel counts not divisible by groups");
  }
}

void init_bottleneck_params(ParamSet& params, const std::string& block, std::int64_t in, std::int64_t out,
                            std::int64_t reduce_ratio, std::mt19937_64& rng) {
  const auto mid = std::max<std::int64_t>(1, in / reduce_ratio);
  params.add(block + ".reduce.weight", kaiming_kernel(mid, in, 1, rng));
  params.add(block + ".reduce.bias", Tensor(Shape{mid}, 0.0));
  params.add(block + ".depthwise.weight", kaiming_kernel(mid, 1, 3, rng));
  params.add(block + ".depthwise.bias", Tensor(Shape{mid}, 0.0));
  params.add(block + ".restore.weight", kaiming_kernel(out, mid, 1, rng));
  params.add(block + ".restore.bias", Tensor(Shape{out}, 0.0));
}

Tensor bottleneck_conv(const Tensor& x, const ParamSet& params, const std::string& block) {
  const Tensor& wr = params.at(block + ".reduce.weight");
  if (x.rank() != 3 || x.dim(0) != wr.dim(1)) {
    throw InvalidArgument("bottleneck_conv: input " + shape_str(x.shape()) + " vs reduce kernel " +
                          shape_str(wr.shape()));
  }
  const auto mid = static_cast<int>(wr.dim(0));
  Tensor h = conv2d(x, wr, params.at(block + ".reduce.bias"));
  h = conv2d(h, params.at(block + ".depthwise.weight"), params.at(block + ".depthwise.bias"), 1, 1, mid);
  return conv2d(h, params.at(block + ".restore.weight"), params.at(block + ".restore.bias"));
}

std::int64_t bottleneck_param_count(std::int64_t in, std::int64_t out, std::int64_t reduce_ratio) {
  const auto mid = std::max<std::int64_t>(1, in / reduce_ratio);
  return (mid * in + mid) + (mid * 9 + mid) + (out * mid + out);
}

void init_lgm_params(ParamSet& params, const FusionConfig& cfg, std::mt19937_64& rng, const std::string& prefix) {
  cfg.validate();
  const auto C = cfg.channels;
  for (int i = 1; i <= 4; ++i) {
    const std::string b = prefix + ".b" + std::to_string(i);
    const std::string n = prefix + ".n" + std::to_string(i);
    init_bottleneck_params(params, b, C, C, cfg.reduce_ratio, rng);
    const double s = i == 4 ? 0.0 : 1.0;
    params.add(n + ".scale", Tensor(Shape{C}, s));
    params.add(n + ".shift", Tensor(Shape{C}, 0.0));
  }
}

Tensor lgm_gate(const Tensor& cond, const ParamSet& params, const FusionConfig& cfg, const std::string& prefix) {
  Tensor c1 = relu(norm(bottleneck_conv(cond, params, prefix + ".b1"), params, prefix + ".n1", cfg.groups));
  return relu(norm(bottleneck_conv(c1, params, prefix + ".b2"), params, prefix + ".n2", cfg.groups));
}

Tensor lgm_gated(const Tensor& trunk, const Tensor& gate, const ParamSet& params, const FusionConfig& cfg,
                 const std::string& prefix) {
  if (trunk.shape() != gate.shape()) {
    throw InvalidArgument("lgm: trunk " + shape_str(trunk.shape()) + " vs gate " + shape_str(gate.shape()));
  }
  Tensor x = relu(norm(bottleneck_conv(trunk, params, prefix + ".b3"), params, prefix + ".n3", cfg.groups));
  Tensor y = relu(norm(bottleneck_conv(x * gate, params, prefix + ".b4"), params, prefix + ".n4", cfg.groups));
  return y + trunk;
}

Tensor lgm(const Tensor& trunk, const Tensor& cond, const ParamSet& params, const FusionConfig& cfg,
           const std::string& prefix) {
  if (trunk.shape() != cond.shape()) {
    throw InvalidArgument("lgm: trunk " + shape_str(trunk.shape()) + " vs condition " + shape_str(cond.shape()));
  }
  return lgm_gated(trunk, lgm_gate(cond, params, cfg, prefix), params, cfg, prefix);
}

void init_importance_params(ParamSet& params, const FusionConfig& cfg, std::mt19937_64& rng,
                            const std::string& prefix) {
  cfg.validate();
  params.add(prefix + ".conv1.weight", kaiming_kernel(cfg.importance_hidden, 2 * cfg.channels, 3, rng));
  params.add(prefix + ".conv1.bias", Tensor(Shape{cfg.importance_hidden}, 0.0));
  params.add(prefix + ".conv2.weight", kaiming_kernel(1, cfg.importance_hidden, 1, rng));
  params.add(prefix + ".conv2.bias", Tensor(Shape{1}, 0.0));
}

std::vector<Tensor> importance_maps(const std::vector<Tensor>& features, const ParamSet& params,
                                    const std::string& prefix) {
  check_grid(features, "importance_maps");
  std::vector<Tensor> maps;
  maps.reserve(features.size());
  for (const auto& f : features) {
    Tensor h = relu(conv2d(concat_channels({f, features[0]}), params.at(prefix + ".conv1.weight"),
                           params.at(prefix + ".conv1.bias"), 1, 1));
    maps.push_back(conv2d(h, params.at(prefix + ".conv2.weight"), params.at(prefix + ".conv2.bias")));
  }
  return maps;
}

Tensor agent_softmax(const std::vector<Tensor>& maps) {
  if (maps.empty()) throw InvalidArgument("agent_softmax: no maps");
  const auto& shape = maps[0].shape();
  if (shape.size() != 3 || shape[0] != 1) throw InvalidArgument("agent_softmax: maps must be 1 x H x W");
  for (const auto& m : maps) {
    if (m.shape() != shape) throw InvalidArgument("agent_softmax: map shapes differ");
  }
  if (maps.size() > kMaxAgents) throw InvalidArgument("agent_softmax: too many agents");
  const auto n = static_cast<std::int64_t>(maps.size());
  const auto hw = shape[1] * shape[2];
  Vector out(n * hw);
  std::array<double, kMaxAgents> terms{};
  for (std::int64_t p = 0; p < hw; ++p) {
    double mx = maps[0][p];
    for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, maps[i][p]);
    for (std::int64_t i = 0; i < n; ++i) terms[i] = std::exp(maps[i][p] - mx);
    std::array<double, kMaxAgents> sorted = terms;
    const double z = sorted_sum(sorted.data(), static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) out[i * hw + p] = terms[i] / z;
  }
  Vector w = out;
  auto backward = [maps, w = std::move(w), n, hw](const Vector& g) {
    for (std::int64_t i = 0; i < n; ++i) {
      if (!maps[i].requires_grad()) continue;
      Vector gi(hw);
      for (std::int64_t p = 0; p < hw; ++p) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < n; ++j) dot += g[j * hw + p] * w[j * hw + p];
        gi[p] = w[i * hw + p] * (g[i * hw + p] - dot);
      }
      maps[i].accumulate_grad(gi);
    }
  };
  return Tensor::from_op(Shape{n, shape[1], shape[2]}, std::move(out), maps, std::move(backward));
}

Tensor weighted_fuse(const Tensor& weights, const std::vector<Tensor>& features) {
  check_grid(features, "weighted_fuse");
  const auto n = static_cast<std::int64_t>(features.size());
  const auto& fs = features[0].shape();
  if (weights.rank() != 3 || weights.dim(0) != n || weights.dim(1) != fs[1] || weights.dim(2) != fs[2]) {
    throw InvalidArgument("weighted_fuse: weights " + shape_str(weights.shape()) + " do not match " +
                          std::to_string(n) + " agents of " + shape_str(fs));
  }
  const auto C = fs[0], hw = fs[1] * fs[2];
  const Vector& w = weights.values();
  Vector out(C * hw);
  std::array<double, kMaxAgents> terms{};
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t p = 0; p < hw; ++p) {
      for (std::int64_t i = 0; i < n; ++i) terms[i] = w[i * hw + p] * features[i][c * hw + p];
      out[c * hw + p] = sorted_sum(terms.data(), static_cast<std::size_t>(n));
    }
  }
  std::vector<Tensor> parents = features;
  parents.push_back(weights);
  auto backward = [weights, features, n, C, hw](const Vector& g) {
    const Vector& w = weights.values();
    for (std::int64_t i = 0; i < n; ++i) {
      if (!features[i].requires_grad()) continue;
      Vector gi(C * hw);
      for (std::int64_t c = 0; c < C; ++c) {
        for (std::int64_t p = 0; p < hw; ++p) gi[c * hw + p] = g[c * hw + p] * w[i * hw + p];
      }
      features[i].accumulate_grad(gi);
    }
    if (weights.requires_grad()) {
      Vector gw = Vector::Zero(n * hw);
      for (std::int64_t i = 0; i < n; ++i) {
        const Vector& f = features[i].values();
        for (std::int64_t c = 0; c < C; ++c) {
          for (std::int64_t p = 0; p < hw; ++p) gw[i * hw + p] += g[c * hw + p] * f[c * hw + p];
        }
      }
      weights.accumulate_grad(gw);
    }
  };
  return Tensor::from_op(fs, std::move(out), parents, std::move(backward));
}

Tensor mean_fuse(const std::vector<Tensor>& features) {
  check_grid(features, "mean_fuse");
  const auto n = static_cast<std::int64_t>(features.size());
  const auto& fs = features[0].shape();
  return weighted_fuse(Tensor(Shape{n, fs[1], fs[2]}, 1.0 / static_cast<double>(n)), features);
}

void init_agf_params(ParamSet& params, const FusionConfig& cfg, std::mt19937_64& rng, const std::string& prefix) {
  init_importance_params(params, cfg, rng, prefix + ".importance");
  init_lgm_params(params, cfg, rng, prefix + ".lgm");
}

Tensor agf_fuse(const std::vector<Tensor>& features, const ParamSet& params, const FusionConfig& cfg,
                const std::string& prefix) {
  check_grid(features, "agf_fuse");
  const Tensor weights = agent_softmax(importance_maps(features, params, prefix + ".importance"));
  return lgm(features[0], weighted_fuse(weights, features), params, cfg, prefix + ".lgm");
}

}  // namespace diffkd
