#include <doctest.h>

#include "support/grad_suite.hpp"

#include <cmath>

using namespace diffkd;
using namespace diffkd::testing;

namespace {

std::vector<Tensor> random_features(std::size_t n, const FusionConfig& cfg, std::mt19937_64& rng) {
  std::vector<Tensor> f;
  for (std::size_t i = 0; i < n; ++i) f.push_back(Tensor::randn({cfg.channels, 6, 5}, rng));
  return f;
}

ParamSet agf_params(const FusionConfig& cfg, std::uint64_t seed, bool perturb) {
  std::mt19937_64 rng(seed);
  ParamSet p;
  init_agf_params(p, cfg, rng);
  if (perturb) randomize(p, rng, 0.3);
  return p;
}

}  // namespace

TEST_CASE("importance maps: shapes and symmetry") {
  const FusionConfig cfg = tiny_fusion();
  std::mt19937_64 rng(1);
  ParamSet p;
  init_importance_params(p, cfg, rng);
  randomize(p, rng);
  const auto f = random_features(3, cfg, rng);
  const auto maps = importance_maps(f, p);
  REQUIRE(maps.size() == 3);
  for (const auto& m : maps) CHECK(m.shape() == Shape{1, 6, 5});
  const auto same = importance_maps({f[1], f[1], f[1]}, p);
  CHECK(same[0].values() == same[1].values());
  CHECK(same[0].values() == same[2].values());
  CHECK_THROWS_AS(importance_maps({f[0], Tensor::randn({cfg.channels, 6, 6}, rng)}, p), InvalidArgument);
}

TEST_CASE("agent softmax closed forms") {
  const Tensor z(Shape{1, 2, 2}, 0.0);
  CHECK(agent_softmax({z}).values() == Vector::Ones(4));
  const Tensor w4 = agent_softmax({z, z, z, z});
  CHECK((w4.values().array() - 0.25).abs().maxCoeff() < 1e-15);
  const Tensor w2 = agent_softmax({z, Tensor(Shape{1, 2, 2}, std::log(3.0))});
  for (std::int64_t p = 0; p < 4; ++p) {
    CHECK(std::abs(w2[p] - 0.25) < 1e-15);
    CHECK(std::abs(w2[4 + p] - 0.75) < 1e-15);
  }
  std::mt19937_64 rng(3);
  std::vector<Tensor> maps;
  for (int i = 0; i < 5; ++i) maps.push_back(Tensor::randn({1, 7, 7}, rng, 4.0));
  const Tensor w = agent_softmax(maps);
  for (std::int64_t p = 0; p < 49; ++p) {
    double s = 0;
    for (int i = 0; i < 5; ++i) {
      CHECK(w[i * 49 + p] >= 0.0);
      s += w[i * 49 + p];
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("weighted fuse: selection, loop oracle, linearity") {
  const FusionConfig cfg = tiny_fusion();
  std::mt19937_64 rng(4);
  const auto f = random_features(3, cfg, rng);
  Tensor onehot(Shape{3, 6, 5}, 0.0);
  for (std::int64_t p = 0; p < 30; ++p) onehot.mutable_values()[60 + p] = 1.0;
  CHECK(weighted_fuse(onehot, f).values() == f[2].values());
  CHECK(weighted_fuse(Tensor(Shape{1, 6, 5}, 1.0), {f[0]}).values() == f[0].values());

  std::vector<Tensor> maps;
  for (int i = 0; i < 3; ++i) maps.push_back(Tensor::randn({1, 6, 5}, rng));
  const Tensor w = agent_softmax(maps);
  const Tensor out = weighted_fuse(w, f);
  double worst = 0;
  for (std::int64_t c = 0; c < cfg.channels; ++c) {
    for (std::int64_t y = 0; y < 6; ++y) {
      for (std::int64_t x = 0; x < 5; ++x) {
        double acc = 0;
        for (int i = 0; i < 3; ++i) acc += w.at(i, y, x) * f[static_cast<std::size_t>(i)].at(c, y, x);
        worst = std::max(worst, std::abs(acc - out.at(c, y, x)));
      }
    }
  }
  CHECK(worst < 1e-12);

  const auto g = random_features(3, cfg, rng);
  std::vector<Tensor> combo;
  for (int i = 0; i < 3; ++i) combo.push_back(2.0 * f[static_cast<std::size_t>(i)] + g[static_cast<std::size_t>(i)]);
  const Vector lhs = weighted_fuse(w, combo).values();
  const Vector rhs = 2.0 * out.values() + weighted_fuse(w, g).values();
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(weighted_fuse(w, {f[0], f[1]}), InvalidArgument);
  const Vector m = mean_fuse(f).values();
  CHECK((m - (f[0].values() + f[1].values() + f[2].values()) / 3.0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("bottleneck: shape and exact parameter count") {
  const std::int64_t C = 32;
  std::mt19937_64 rng(5);
  ParamSet p;
  init_bottleneck_params(p, "b", C, C, 4, rng);
  CHECK(p.total_elements() == bottleneck_param_count(C, C, 4));
  CHECK(bottleneck_param_count(C, C, 4) == (8 * 32 + 8) + (8 * 9 + 8) + (32 * 8 + 32));
  CHECK(bottleneck_param_count(C, C, 4) < C * C * 9 + C);
  const Tensor x = Tensor::randn({C, 5, 7}, rng);
  CHECK(bottleneck_conv(x, p, "b").shape() == x.shape());
  CHECK_THROWS_AS(bottleneck_conv(Tensor::randn({C + 1, 5, 7}, rng), p, "b"), InvalidArgument);
}

TEST_CASE("LGM identity at init and the gate-off closed form") {
  const FusionConfig cfg = tiny_fusion();
  std::mt19937_64 rng(6);
  ParamSet p;
  init_lgm_params(p, cfg, rng);
  const Tensor trunk = Tensor::randn({cfg.channels, 6, 5}, rng), cond = Tensor::randn({cfg.channels, 6, 5}, rng);
  CHECK(lgm(trunk, cond, p, cfg).values() == trunk.values());

  randomize(p, rng);
  const Tensor zero_gate(trunk.shape(), 0.0);
  const Tensor b4 = bottleneck_conv(Tensor(trunk.shape(), 0.0), p, "lgm.b4");
  const Tensor expected = relu(group_norm(b4, cfg.groups, 1e-5, p["lgm.n4.scale"], p["lgm.n4.shift"])) + trunk;
  CHECK((lgm_gated(trunk, zero_gate, p, cfg).values() - expected.values()).cwiseAbs().maxCoeff() < 1e-12);

  for (const auto& [path, e] : p) {
    if (path.ends_with(".bias") || path.ends_with(".shift")) {
      Tensor t = e.value;
      t.mutable_values().setZero();
    }
  }
  CHECK((lgm_gated(trunk, zero_gate, p, cfg).values() - trunk.values()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("AGF: single agent, identity at init, permutation invariance") {
  const FusionConfig cfg = tiny_fusion();
  std::mt19937_64 rng(7);
  const auto f = random_features(4, cfg, rng);

  const ParamSet init = agf_params(cfg, 1, false);
  CHECK(agf_fuse(f, init, cfg).values() == f[0].values());

  const ParamSet p = agf_params(cfg, 2, true);
  CHECK(agf_fuse({f[0]}, p, cfg).values() == lgm(f[0], f[0], p, cfg, "agf.lgm").values());
  const Tensor base = agf_fuse(f, p, cfg);
  CHECK(base.values() != f[0].values());
  const std::vector<std::vector<std::size_t>> perms = {{0, 2, 1, 3}, {0, 3, 2, 1}, {0, 3, 1, 2}};
  for (const auto& perm : perms) {
    std::vector<Tensor> g;
    for (auto i : perm) g.push_back(f[i]);
    CHECK(agf_fuse(g, p, cfg).values() == base.values());
  }
}
