#pragma once

#include "diffkd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace diffkd::testing {

/// Maps a list of leaf tensors to a tensor output.
using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;  // worst input, norm-wise
  bool ok(double tol = 1e-4) const { return max_rel_error < tol; }
};

/// Central-difference check of d<out, R>/d(inputs) for a fixed random
/// projection R. Relative error per input is ||g_a - g_n|| / max(||g_a||, ||g_n||).
/// A coordinate whose one-sided slopes disagree sits on a ReLU or max kink
/// inside the stencil; it is re-differenced with a 10x smaller step (three times at most).
inline GradCheckResult grad_check(const TensorFn& fn, std::vector<Tensor> inputs, std::uint64_t seed = 1,
                                  double h = 1e-5) {
  for (auto& x : inputs) x.set_requires_grad();
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);  // independent of the inputs' stream
  Tensor out = fn(inputs);
  const Tensor proj = Tensor::randn(out.shape(), rng);
  auto objective = [&](const std::vector<Tensor>& xs) { return sum(fn(xs) * proj); };

  for (auto& x : inputs) x.zero_grad();
  objective(inputs).backward();

  GradCheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Vector analytic = inputs[k].grad();
    Vector numeric(inputs[k].numel());
    NoGradGuard guard;
    const double f0 = objective(inputs).item();
    for (std::int64_t i = 0; i < inputs[k].numel(); ++i) {
      const double orig = inputs[k].mutable_values()[i];
      double step = h;
      for (int attempt = 0; attempt < 4; ++attempt, step *= 0.1) {
        inputs[k].mutable_values()[i] = orig + step;
        const double fp = objective(inputs).item();
        inputs[k].mutable_values()[i] = orig - step;
        const double fm = objective(inputs).item();
        inputs[k].mutable_values()[i] = orig;
        numeric[i] = (fp - fm) / (2.0 * step);
        const double right = (fp - f0) / step, left = (f0 - fm) / step;
        const double slope = std::abs(right) + std::abs(left);
        const double rounding = 2e-16 * std::max(1.0, std::abs(f0)) / step;
        if (std::abs(right - left) <= 1e-5 * slope + rounding) break;
        if (10.0 * rounding > 1e-4 * slope) break;  // a smaller step would be noise-dominated
      }
    }
    const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
    res.max_rel_error = std::max(res.max_rel_error, (analytic - numeric).norm() / scale);
  }
  return res;
}

/// Values bounded away from zero, so ReLU-like kinks are not straddled by
/// the finite-difference stencil.
inline Tensor randn_away_from_zero(Shape shape, std::mt19937_64& rng, double margin = 0.05) {
  Tensor t = Tensor::randn(std::move(shape), rng);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    double& v = t.mutable_values()[i];
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
  return t;
}

}  // namespace diffkd::testing
