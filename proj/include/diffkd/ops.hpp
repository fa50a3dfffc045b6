#pragma once

#include "diffkd/tensor.hpp"

#include <vector>

namespace diffkd {

// Binary elementwise ops. Shapes must have equal rank and each extent must
// match or be 1 on one side (covers 1xHxW against CxHxW and Cx1x1 biases);
// a single-element tensor broadcasts against anything.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }
inline Tensor operator*(const Tensor& x, double s) { return scale(x, s); }

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor square(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

enum class Activation { relu, sigmoid, softmax };
/// Dispatching form; `axis` is only read for softmax.
Tensor activate(const Tensor& x, Activation kind, int axis = 0);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Stacks CxHxW tensors along the channel axis.
Tensor concat_channels(const std::vector<Tensor>& parts);

/// Cross-correlation of a CxHxW input. kernel is C_out x (C_in/groups) x k x k;
/// bias (C_out) may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride = 1,
              int padding = 0, int groups = 1);

/// Group normalization of a CxHxW input; scale/shift (C) may be undefined for
/// the plain normalized output.
Tensor group_norm(const Tensor& input, int num_groups, double eps, const Tensor& scale,
                  const Tensor& shift);

/// Nearest-neighbour 2x upsampling of CxHxW.
Tensor upsample2x(const Tensor& x);

/// sum_i weights[i] * xs[i]; weights is a length-N vector.
Tensor weighted_sum(const std::vector<Tensor>& xs, const Tensor& weights);

/// softplus(raw) / (sum softplus(raw) + eps): positive weights summing to ~1.
Tensor normalized_positive(const Tensor& raw, double eps = 1e-4);

}  // namespace diffkd
