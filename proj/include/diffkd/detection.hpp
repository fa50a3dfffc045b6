#pragma once

#include "diffkd/bev_encoder.hpp"
#include "diffkd/geometry.hpp"

#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace diffkd {

inline constexpr int kRegChannels = 6;  // dx, dy, log w, log l, sin yaw, cos yaw

struct DetectionMap {
  Tensor cls_logits;  // 1 x H x W
  Tensor reg;         // 6 x H x W
};

void init_head_params(ParamSet& params, std::int64_t channels, std::mt19937_64& rng,
                      const std::string& prefix = "head", double prior = 0.01);

/// Two parallel 1x1 convolutions.
DetectionMap head_forward(const Tensor& feature, const ParamSet& params, const std::string& prefix = "head");

struct TargetMap {
  std::int64_t H = 0, W = 0;
  Vector cls;                    // H*W, 0 or 1
  Vector reg;                    // 6*H*W, zero off the positive cells
  std::vector<unsigned char> positive;
  std::int64_t num_positive = 0;
};

/// Centre-cell assignment; when several centres share a cell the larger box wins.
/// Boxes whose centre lies outside the grid are ignored.
TargetMap assign_targets(const std::vector<BoxBEV>& gt, const BEVGridConfig& grid);

/// Decodes the regression channels of one cell.
BoxBEV decode_cell(const DetectionMap& det, const BEVGridConfig& grid, std::int64_t row, std::int64_t col);

/// Greedy NMS, highest score first; a box is dropped when its IoU with a kept
/// box exceeds iou_thresh.
std::vector<BoxBEV> nms(std::vector<BoxBEV> boxes, double iou_thresh);

/// Decodes every cell with sigmoid score >= score_thresh (at most max_candidates,
/// best first), then applies NMS.
std::vector<BoxBEV> decode_and_nms(const DetectionMap& det, const BEVGridConfig& grid, double score_thresh,
                                   double nms_iou, std::size_t max_candidates = 256);

/// CSV rows "scene_id,cx,cy,w,l,yaw,score" (header written when requested).
void write_detections_csv(std::ostream& os, std::size_t scene_id, const std::vector<BoxBEV>& boxes,
                          bool header = false);

}  // namespace diffkd
