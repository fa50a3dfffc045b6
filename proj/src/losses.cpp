#include "diffkd/losses.hpp"

#include "diffkd/ops.hpp"

#include <algorithm>
#include <cmath>

namespace diffkd {

namespace {

double softplus_d(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid_d(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

void check_targets(const Shape& shape, std::int64_t channels, const TargetMap& t, const char* who) {
  if (shape != Shape{channels, t.H, t.W}) {
    throw InvalidArgument(std::string(who) + ": map " + shape_str(shape) + " vs targets " +
                          std::to_string(t.H) + "x" + std::to_string(t.W));
  }
}

}  // namespace

Tensor focal_loss(const Tensor& cls_logits, const TargetMap& targets, const FocalOptions& o) {
  check_targets(cls_logits.shape(), 1, targets, "focal_loss");
  const auto n = cls_logits.numel();
  const double norm = 1.0 / static_cast<double>(std::max<std::int64_t>(1, targets.num_positive));
  const Vector& x = cls_logits.values();
  Vector grad(n);
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double p = sigmoid_d(x[i]);
    if (targets.cls[i] > 0.5) {
      const double log_p = -softplus_d(-x[i]);
      const double q = std::pow(1.0 - p, o.gamma);
      total += -o.alpha * q * log_p;
      grad[i] = o.alpha * q * (o.gamma * p * log_p - (1.0 - p));
    } else {
      const double log_q = -softplus_d(x[i]);
      const double q = std::pow(p, o.gamma);
      total += -(1.0 - o.alpha) * q * log_q;
      grad[i] = (1.0 - o.alpha) * q * (p - o.gamma * (1.0 - p) * log_q);
    }
  }
  grad *= norm;
  auto backward = [cls_logits, grad = std::move(grad)](const Vector& g) { cls_logits.accumulate_grad(g[0] * grad); };
  return Tensor::from_op(Shape{1}, Vector::Constant(1, total * norm), {cls_logits}, std::move(backward));
}

Tensor smooth_l1_loss(const Tensor& reg, const TargetMap& targets, double beta) {
  check_targets(reg.shape(), kRegChannels, targets, "smooth_l1_loss");
  if (!(beta > 0.0)) throw InvalidArgument("smooth_l1_loss: beta must be positive");
  const auto hw = targets.H * targets.W;
  Vector grad = Vector::Zero(reg.numel());
  double total = 0.0;
  if (targets.num_positive > 0) {
    const double norm = 1.0 / static_cast<double>(targets.num_positive);
    const Vector& r = reg.values();
    for (std::int64_t cell = 0; cell < hw; ++cell) {
      if (!targets.positive[static_cast<std::size_t>(cell)]) continue;
      for (int k = 0; k < kRegChannels; ++k) {
        const auto i = k * hw + cell;
        const double d = r[i] - targets.reg[i];
        const double a = std::abs(d);
        total += a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
        grad[i] = (a < beta ? d / beta : (d > 0 ? 1.0 : -1.0)) * norm;
      }
    }
    total *= norm;
  }
  auto backward = [reg, grad = std::move(grad)](const Vector& g) { reg.accumulate_grad(g[0] * grad); };
  return Tensor::from_op(Shape{1}, Vector::Constant(1, total), {reg}, std::move(backward));
}

Tensor channel_kl(const Tensor& student, const Tensor& teacher) {
  if (student.shape() != teacher.shape() || student.rank() != 3) {
    throw InvalidArgument("channel_kl: student " + shape_str(student.shape()) + " vs teacher " +
                          shape_str(teacher.shape()));
  }
  const auto C = student.dim(0), hw = student.dim(1) * student.dim(2);
  const Vector& s = student.values();
  const Vector& t = teacher.values();
  Vector grad(student.numel());
  std::vector<double> ls(static_cast<std::size_t>(C)), lt(static_cast<std::size_t>(C));
  double total = 0.0;
  for (std::int64_t p = 0; p < hw; ++p) {
    double ms = s[p], mt = t[p];
    for (std::int64_t c = 1; c < C; ++c) {
      ms = std::max(ms, s[c * hw + p]);
      mt = std::max(mt, t[c * hw + p]);
    }
    double zs = 0.0, zt = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      zs += std::exp(s[c * hw + p] - ms);
      zt += std::exp(t[c * hw + p] - mt);
    }
    const double lzs = ms + std::log(zs), lzt = mt + std::log(zt);
    double kl = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      ls[c] = s[c * hw + p] - lzs;
      lt[c] = t[c * hw + p] - lzt;
      kl += std::exp(ls[c]) * (ls[c] - lt[c]);
    }
    for (std::int64_t c = 0; c < C; ++c) grad[c * hw + p] = std::exp(ls[c]) * (ls[c] - lt[c] - kl);
    total += kl;
  }
  const double norm = 1.0 / static_cast<double>(hw);
  grad *= norm;
  auto backward = [student, grad = std::move(grad)](const Vector& g) { student.accumulate_grad(g[0] * grad); };
  return Tensor::from_op(Shape{1}, Vector::Constant(1, total * norm), {student}, std::move(backward));
}

Tensor bernoulli_kl(const Tensor& student_logits, const Tensor& teacher_logits) {
  if (student_logits.shape() != teacher_logits.shape()) {
    throw InvalidArgument("bernoulli_kl: student " + shape_str(student_logits.shape()) + " vs teacher " +
                          shape_str(teacher_logits.shape()));
  }
  const auto n = student_logits.numel();
  const Vector& zs = student_logits.values();
  const Vector& zt = teacher_logits.values();
  Vector grad(n);
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double pt = sigmoid_d(zt[i]);
    const double log_pt = -softplus_d(-zt[i]), log_qt = -softplus_d(zt[i]);
    const double log_ps = -softplus_d(-zs[i]), log_qs = -softplus_d(zs[i]);
    total += pt * (log_pt - log_ps) + (1.0 - pt) * (log_qt - log_qs);
    grad[i] = sigmoid_d(zs[i]) - pt;
  }
  const double norm = 1.0 / static_cast<double>(n);
  grad *= norm;
  auto backward = [student_logits, grad = std::move(grad)](const Vector& g) {
    student_logits.accumulate_grad(g[0] * grad);
  };
  return Tensor::from_op(Shape{1}, Vector::Constant(1, std::max(0.0, total * norm)), {student_logits},
                         std::move(backward));
}

std::pair<Tensor, Tensor> kd_output_loss(const DetectionMap& student, const DetectionMap& teacher) {
  return {bernoulli_kl(student.cls_logits, teacher.cls_logits), channel_kl(student.reg, teacher.reg)};
}

LossBundle compose_losses(double l_diff_sum, double l_kd_feat, double l_kd_cls, double l_kd_reg, double l_cls,
                          double l_reg) {
  LossBundle b;
  b.l_diff_sum = l_diff_sum;
  b.l_kd_feat = l_kd_feat;
  b.l_kd_cls = l_kd_cls;
  b.l_kd_reg = l_kd_reg;
  b.l_cls = l_cls;
  b.l_reg = l_reg;
  b.l_kd_post = l_kd_feat + l_kd_cls + l_kd_reg;
  b.l_pkd = l_diff_sum + b.l_kd_post;
  b.l_final = b.l_pkd + l_cls + l_reg;
  return b;
}

ComposedLoss compose_losses(const LossParts& p) {
  auto value = [](const Tensor& t) { return t.defined() ? t.item() : 0.0; };
  auto part = [](const Tensor& t) { return t.defined() ? t : Tensor::scalar(0.0); };
  ComposedLoss out;
  out.values = compose_losses(value(p.diff_sum), value(p.kd_feat), value(p.kd_cls), value(p.kd_reg), value(p.cls),
                              value(p.reg));
  const Tensor kd_post = part(p.kd_feat) + part(p.kd_cls) + part(p.kd_reg);
  const Tensor pkd = part(p.diff_sum) + kd_post;
  out.total = pkd + part(p.cls) + part(p.reg);
  return out;
}

}  // namespace diffkd
