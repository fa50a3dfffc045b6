#pragma once

#include "diffkd/geometry.hpp"

#include <stdexcept>
#include <utility>
#include <vector>

namespace diffkd {

class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Exact IoU of two oriented rectangles; 0 when either has zero area.
double rotated_iou(const BoxBEV& a, const BoxBEV& b);

struct SceneDetections {
  std::vector<BoxBEV> preds;
  std::vector<BoxBEV> gts;
};

inline constexpr int kApRecallPoints = 41;

/// Precision/recall after each prediction, predictions taken in descending
/// score order across all scenes; greedy matching per scene (each gt at most
/// once, highest-IoU unmatched gt, match iff IoU >= iou_thresh).
struct PrCurve {
  std::vector<double> precision, recall;
  std::size_t num_gt = 0;
};
PrCurve precision_recall(const std::vector<SceneDetections>& scenes, double iou_thresh);

/// 41-point interpolated AP. No gts and no predictions gives 1; gts without
/// predictions, or predictions without gts, give 0.
double average_precision(const std::vector<SceneDetections>& scenes, double iou_thresh);
double average_precision(const std::vector<BoxBEV>& preds, const std::vector<BoxBEV>& gts, double iou_thresh);
/// Interpolation step alone, exposed for oracles.
double interpolated_ap(const std::vector<double>& precision, const std::vector<double>& recall);

struct Robustness {
  double rce50 = 0.0, rce70 = 0.0, mrce = 0.0;
};

/// Mean relative AP drop across corruptions at each IoU threshold and their
/// mean. Inputs are (AP@0.5, AP@0.7) pairs in any consistent unit.
Robustness compute_rce_mrce(std::pair<double, double> clean, const std::vector<std::pair<double, double>>& corrupted);

}  // namespace diffkd
