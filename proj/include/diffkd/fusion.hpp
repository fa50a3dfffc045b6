#pragma once

#include "diffkd/param_set.hpp"

#include <random>
#include <string>
#include <vector>

namespace diffkd {

struct FusionConfig {
  std::int64_t channels = 32;
  std::int64_t importance_hidden = 8;
  std::int64_t reduce_ratio = 4;
  int groups = 4;  // group-norm groups for the full-width stages
  void validate() const;
};

/// Bottleneck block: 1x1 reduce, 3x3 depthwise, 1x1 restore.
void init_bottleneck_params(ParamSet& params, const std::string& block, std::int64_t in, std::int64_t out,
                            std::int64_t reduce_ratio, std::mt19937_64& rng);
Tensor bottleneck_conv(const Tensor& x, const ParamSet& params, const std::string& block);
/// Exact parameter count (weights + biases) of one bottleneck block.
std::int64_t bottleneck_param_count(std::int64_t in, std::int64_t out, std::int64_t reduce_ratio);

/// LGM blocks b1..b4 with group norms n1..n4. The n4 affine starts at zero so
/// the module is the identity on the trunk at initialization.
void init_lgm_params(ParamSet& params, const FusionConfig& cfg, std::mt19937_64& rng,
                     const std::string& prefix = "lgm");
/// Gate path: ReLU(N2(B2(ReLU(N1(B1(cond)))))).
Tensor lgm_gate(const Tensor& cond, const ParamSet& params, const FusionConfig& cfg,
                const std::string& prefix = "lgm");
/// Trunk path given a gate: ReLU(N4(B4(ReLU(N3(B3(trunk))) * gate))) + trunk.
Tensor lgm_gated(const Tensor& trunk, const Tensor& gate, const ParamSet& params, const FusionConfig& cfg,
                 const std::string& prefix = "lgm");
Tensor lgm(const Tensor& trunk, const Tensor& cond, const ParamSet& params, const FusionConfig& cfg,
           const std::string& prefix = "lgm");

/// Importance network: 3x3 conv (2C -> hidden), ReLU, 1x1 conv (hidden -> 1).
void init_importance_params(ParamSet& params, const FusionConfig& cfg, std::mt19937_64& rng,
                            const std::string& prefix = "importance");
/// One 1 x H x W map per agent from [F_i ; F_ego]; index 0 is the ego agent.
std::vector<Tensor> importance_maps(const std::vector<Tensor>& features, const ParamSet& params,
                                    const std::string& prefix = "importance");

/// Per-pixel softmax across agents. Returns N x H x W; row i is omega_i.
/// Sums are taken over sorted terms, so the result is exactly invariant to
/// the order of the maps.
Tensor agent_softmax(const std::vector<Tensor>& maps);

/// sum_i omega_i * F_i with omega broadcast over channels (order-invariant).
Tensor weighted_fuse(const Tensor& weights, const std::vector<Tensor>& features);
/// weighted_fuse with uniform weights 1/N.
Tensor mean_fuse(const std::vector<Tensor>& features);

/// Full AGF parameter set: "<prefix>.importance.*" and "<prefix>.lgm.*".
void init_agf_params(ParamSet& params, const FusionConfig& cfg, std::mt19937_64& rng,
                     const std::string& prefix = "agf");
/// lgm(trunk = F_ego, cond = weighted_fuse(agent_softmax(importance_maps(F)), F)).
Tensor agf_fuse(const std::vector<Tensor>& features, const ParamSet& params, const FusionConfig& cfg,
                const std::string& prefix = "agf");

}  // namespace diffkd
