#include "diffkd/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace diffkd {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw InvalidArgument("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

Vector& Node::ensure_grad() {
  if (grad.size() != value.size()) grad = Vector::Zero(value.size());
  return grad;
}

}  // namespace detail

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::Node>()) {
  node_->value = Vector::Constant(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, Vector values) : node_(std::make_shared<detail::Node>()) {
  if (shape_numel(shape) != values.size()) {
    throw InvalidArgument("tensor data length " + std::to_string(values.size()) +
                          " does not match shape " + shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor::Tensor(Shape shape, const std::vector<double>& values)
    : Tensor(std::move(shape), Vector(Eigen::Map<const Vector>(values.data(),
                                                                static_cast<Eigen::Index>(values.size())))) {}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, v); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Vector v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Vector v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::from_op(Shape shape, Vector values, const std::vector<Tensor>& parents,
                       BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  if (!GradMode::enabled()) return out;
  bool any = false;
  for (const auto& p : parents) any = any || (p.defined() && p.requires_grad());
  if (!any) return out;
  out.node_->requires_grad = true;
  for (const auto& p : parents) {
    if (p.defined() && p.requires_grad()) out.node_->parents.push_back(p.node_);
  }
  out.node_->backward = std::move(backward);
  return out;
}

detail::Node& Tensor::node() const {
  if (!node_) throw PreconditionError("use of an undefined tensor");
  return *node_;
}

std::int64_t Tensor::dim(int axis) const {
  const auto& s = node().shape;
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw InvalidArgument("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

double Tensor::at(std::int64_t c, std::int64_t h, std::int64_t w) const {
  const auto& s = node().shape;
  return node().value[(c * s[1] + h) * s[2] + w];
}

double Tensor::item() const {
  if (numel() != 1) throw InvalidArgument("item() on tensor of shape " + shape_str(shape()));
  return node().value[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node().is_leaf()) throw PreconditionError("requires_grad can only be set on leaf tensors");
  node().requires_grad = on;
  return *this;
}

Vector Tensor::grad() const {
  if (has_grad()) return node().grad;
  return Vector::Zero(numel());
}

void Tensor::zero_grad() { node().grad.resize(0); }

void Tensor::accumulate_grad(const Vector& g) const {
  if (!node().requires_grad) return;
  node().ensure_grad() += g;
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw InvalidArgument("backward() requires a scalar loss, got shape " + shape_str(shape()));
  }
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      auto* p = n->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf()) n->grad = Vector::Zero(n->value.size());
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward((*it)->grad);
  }
}

Tensor Tensor::detach() const { return Tensor(shape(), values()); }

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw InvalidArgument("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  }
  Tensor self = *this;
  return from_op(std::move(shape), values(), {self}, [self](const Vector& g) { self.accumulate_grad(g); });
}

}  // namespace diffkd
