#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffkd {

using Shape = std::vector<std::int64_t>;
using Vector = Eigen::VectorXd;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thrown for shape and argument contract violations.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an operation's precondition on state (not arguments) fails.
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

struct Node {
  Shape shape;
  Vector value;
  Vector grad;  // size 0 until something flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Vector&)> backward;

  bool is_leaf() const { return !backward; }
  Vector& ensure_grad();
};

}  // namespace detail

/// Whether operations record onto the tape. Thread-local.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

/// Disables tape recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Dense row-major float64 tensor with reverse-mode tape participation.
///
/// Copies share the underlying node (handle semantics): a parameter held in a
/// ParamSet and a copy used in a forward pass accumulate into the same grad.
class Tensor {
 public:
  using BackwardFn = std::function<void(const Vector& grad_out)>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, Vector values);
  Tensor(Shape shape, const std::vector<double>& values);

  static Tensor scalar(double v);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi);

  /// Builds an op result. Records `backward` only when grad mode is on and a
  /// parent requires grad.
  static Tensor from_op(Shape shape, Vector values, const std::vector<Tensor>& parents,
                        BackwardFn backward);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  int rank() const { return static_cast<int>(node().shape.size()); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return node().value.size(); }

  const Vector& values() const { return node().value; }
  /// Direct write access; only meaningful for leaves (parameters, inputs).
  Vector& mutable_values() { return node().value; }
  double operator[](std::int64_t i) const { return node().value[i]; }
  double at(std::int64_t c, std::int64_t h, std::int64_t w) const;
  double item() const;

  bool requires_grad() const { return node().requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  bool has_grad() const { return node().grad.size() > 0; }
  /// Gradient buffer; zeros of the right shape if nothing has flowed in.
  Vector grad() const;
  void zero_grad();
  /// Adds into this tensor's grad if it participates in the tape.
  void accumulate_grad(const Vector& g) const;

  /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  /// calls; interior gradients are recomputed each call.
  void backward() const;

  /// Same values, cut from the tape.
  Tensor detach() const;
  Tensor clone() const { return detach(); }
  Tensor reshape(Shape shape) const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  detail::Node& node() const;
  std::shared_ptr<detail::Node> node_;
};

}  // namespace diffkd
