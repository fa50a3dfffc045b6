#pragma once

#include "diffkd/detection.hpp"

#include <utility>

namespace diffkd {

struct FocalOptions {
  double alpha = 0.25;
  double gamma = 2.0;
};

/// Sigmoid focal loss summed over cells and divided by max(1, #positives).
Tensor focal_loss(const Tensor& cls_logits, const TargetMap& targets, const FocalOptions& options = {});

/// Smooth-L1 (beta = 1) over the regression channels of positive cells,
/// divided by the number of positives; 0 when there are none.
Tensor smooth_l1_loss(const Tensor& reg, const TargetMap& targets, double beta = 1.0);

/// KL(softmax_c(student) || softmax_c(teacher)) per location, averaged over
/// locations. The teacher is treated as a constant.
Tensor channel_kl(const Tensor& student, const Tensor& teacher);

inline Tensor kd_feat_loss(const Tensor& student, const Tensor& teacher) { return channel_kl(student, teacher); }

/// Per-cell Bernoulli KL(teacher || student) of sigmoid scores, averaged over
/// cells; teacher constant.
Tensor bernoulli_kl(const Tensor& student_logits, const Tensor& teacher_logits);

/// (classification KD, regression KD).
std::pair<Tensor, Tensor> kd_output_loss(const DetectionMap& student, const DetectionMap& teacher);

struct LossBundle {
  double l_diff_sum = 0, l_kd_feat = 0, l_kd_cls = 0, l_kd_reg = 0, l_kd_post = 0, l_pkd = 0, l_cls = 0, l_reg = 0,
         l_final = 0;
};

LossBundle compose_losses(double l_diff_sum, double l_kd_feat, double l_kd_cls, double l_kd_reg, double l_cls,
                          double l_reg);

/// Differentiable parts; undefined tensors count as zero.
struct LossParts {
  Tensor diff_sum, kd_feat, kd_cls, kd_reg, cls, reg;
};

struct ComposedLoss {
  Tensor total;  // l_final
  LossBundle values;
};

ComposedLoss compose_losses(const LossParts& parts);

}  // namespace diffkd
