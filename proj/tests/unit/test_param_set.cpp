#include <doctest.h>

#include "diffkd/ops.hpp"
#include "diffkd/param_set.hpp"

#include <cmath>
#include <sstream>

using namespace diffkd;

namespace {

ParamSet small_set(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamSet p;
  p.add("b.weight", Tensor::randn({3, 2}, rng));
  p.add("a.bias", Tensor::randn({4}, rng));
  return p;
}

Tensor toy_loss(const ParamSet& p) { return sum(square(p["b.weight"])) + sum(relu(p["a.bias"])); }

}  // namespace

TEST_CASE("registration, lookup and ordering") {
  ParamSet p = small_set(1);
  CHECK(p.size() == 2);
  CHECK(p.total_elements() == 10);
  CHECK(p["a.bias"].requires_grad());
  CHECK(p.begin()->first == "a.bias");
  CHECK_THROWS(p.at("missing"));
}

TEST_CASE("first Adam step moves a scalar by lr in the gradient sign") {
  ParamSet p;
  p.add("w", Tensor::scalar(0.5));
  scale(p["w"], 3.0).backward();
  adam_step(p, 1e-3);
  // m = 0.1 g, v = 0.001 g^2; bias-corrected ratio is g / (|g| + eps').
  const double expected = 0.5 - 1e-3 * 3.0 / (3.0 + 1e-8);
  CHECK(std::abs(p["w"].item() - expected) < 1e-15);
  CHECK(p.step_count() == 1);
  CHECK_FALSE(p["w"].has_grad());
}

TEST_CASE("zero gradient leaves parameters unchanged but counts the step") {
  ParamSet p = small_set(2);
  const auto before = p.content_hash();
  scale(sum(p["a.bias"]) + sum(p["b.weight"]), 0.0).backward();
  adam_step(p, 1e-2);
  CHECK(p.content_hash() == before);
  CHECK(p.step_count() == 1);
}

TEST_CASE("missing gradient names the parameter") {
  ParamSet p = small_set(3);
  sum(p["b.weight"]).backward();
  try {
    adam_step(p, 1e-3);
    FAIL("expected PreconditionError");
  } catch (const PreconditionError& e) {
    CHECK(std::string(e.what()).find("a.bias") != std::string::npos);
  }
}

TEST_CASE("ten Adam steps are bit-reproducible") {
  auto run = [] {
    ParamSet p = small_set(4);
    for (int i = 0; i < 10; ++i) {
      toy_loss(p).backward();
      adam_step(p, 1e-2);
    }
    return p;
  };
  const ParamSet a = run(), b = run();
  for (const auto& [path, e] : a) CHECK(e.value.values() == b[path].values());
  CHECK(a.content_hash() == b.content_hash());
}

TEST_CASE("serialization round trip") {
  const ParamSet p = small_set(5);
  std::stringstream ss;
  write_params(ss, p);
  CHECK(ss.str().substr(0, 4) == "DKD1");
  const ParamSet q = read_params(ss);
  CHECK(q.size() == p.size());
  for (const auto& [path, e] : p) {
    CHECK(q[path].shape() == e.value.shape());
    CHECK(q[path].values() == e.value.values());
  }
  std::stringstream bad("XXXX");
  CHECK_THROWS(read_params(bad));
  std::stringstream cut(ss.str().substr(0, ss.str().size() / 2));
  CHECK_THROWS(read_params(cut));
}

TEST_CASE("clone is deep, copies share tensors") {
  ParamSet p = small_set(6);
  ParamSet shallow = p;
  ParamSet deep = p.clone();
  Tensor handle = p["a.bias"];
  handle.mutable_values()[0] += 1.0;
  CHECK(shallow["a.bias"][0] == p["a.bias"][0]);
  CHECK(deep["a.bias"][0] != p["a.bias"][0]);
}

TEST_CASE("copy_values_from honours the prefix") {
  ParamSet src = small_set(7), dst = small_set(8);
  CHECK(dst.copy_values_from(src, "a.") == 1);
  CHECK(dst["a.bias"].values() == src["a.bias"].values());
  CHECK(dst["b.weight"].values() != src["b.weight"].values());
}
