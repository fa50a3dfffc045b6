#include "diffkd/detection.hpp"

#include "diffkd/metrics.hpp"
#include "diffkd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace diffkd {

void init_head_params(ParamSet& params, std::int64_t channels, std::mt19937_64& rng, const std::string& prefix,
                      double prior) {
  if (!(prior > 0.0 && prior < 1.0)) throw InvalidArgument("head: prior must be in (0, 1)");
  params.add(prefix + ".cls.weight", kaiming_kernel(1, channels, 1, rng, 0.1));
  params.add(prefix + ".cls.bias", Tensor(Shape{1}, -std::log((1.0 - prior) / prior)));
  params.add(prefix + ".reg.weight", kaiming_kernel(kRegChannels, channels, 1, rng, 0.1));
  params.add(prefix + ".reg.bias", Tensor(Shape{kRegChannels}, 0.0));
}

DetectionMap head_forward(const Tensor& feature, const ParamSet& params, const std::string& prefix) {
  const Tensor& wc = params.at(prefix + ".cls.weight");
  if (feature.rank() != 3 || feature.dim(0) != wc.dim(1)) {
    throw InvalidArgument("head_forward: feature " + shape_str(feature.shape()) + " vs head kernel " +
                          shape_str(wc.shape()));
  }
  return {conv2d(feature, wc, params.at(prefix + ".cls.bias")),
          conv2d(feature, params.at(prefix + ".reg.weight"), params.at(prefix + ".reg.bias"))};
}

TargetMap assign_targets(const std::vector<BoxBEV>& gt, const BEVGridConfig& grid) {
  TargetMap t;
  t.H = grid.H;
  t.W = grid.W;
  const auto hw = grid.H * grid.W;
  t.cls = Vector::Zero(hw);
  t.reg = Vector::Zero(kRegChannels * hw);
  t.positive.assign(static_cast<std::size_t>(hw), 0);

  std::vector<std::size_t> order(gt.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return gt[a].area() > gt[b].area(); });
  const double cx = grid.cell_x(), cy = grid.cell_y();
  for (auto i : order) {
    const auto& b = gt[i];
    const double fc = std::floor((b.cx - grid.x_min) / cx);
    const double fr = std::floor((b.cy - grid.y_min) / cy);
    if (!(fc >= 0 && fc < grid.W && fr >= 0 && fr < grid.H)) continue;
    const auto col = static_cast<std::int64_t>(fc), row = static_cast<std::int64_t>(fr);
    const auto cell = row * grid.W + col;
    if (t.positive[static_cast<std::size_t>(cell)]) continue;
    t.positive[static_cast<std::size_t>(cell)] = 1;
    ++t.num_positive;
    t.cls[cell] = 1.0;
    const double ccx = grid.x_min + (static_cast<double>(col) + 0.5) * cx;
    const double ccy = grid.y_min + (static_cast<double>(row) + 0.5) * cy;
    const double enc[kRegChannels] = {(b.cx - ccx) / cx, (b.cy - ccy) / cy, std::log(b.w), std::log(b.l),
                                      std::sin(b.yaw), std::cos(b.yaw)};
    for (int k = 0; k < kRegChannels; ++k) t.reg[k * hw + cell] = enc[k];
  }
  return t;
}

BoxBEV decode_cell(const DetectionMap& det, const BEVGridConfig& grid, std::int64_t row, std::int64_t col) {
  const auto hw = grid.H * grid.W;
  const auto cell = row * grid.W + col;
  const Vector& r = det.reg.values();
  BoxBEV b;
  b.cx = grid.x_min + (static_cast<double>(col) + 0.5 + r[cell]) * grid.cell_x();
  b.cy = grid.y_min + (static_cast<double>(row) + 0.5 + r[hw + cell]) * grid.cell_y();
  b.w = std::exp(std::clamp(r[2 * hw + cell], -5.0, 5.0));
  b.l = std::exp(std::clamp(r[3 * hw + cell], -5.0, 5.0));
  b.yaw = std::atan2(r[4 * hw + cell], r[5 * hw + cell]);
  const double z = det.cls_logits[cell];
  b.score = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return b;
}

std::vector<BoxBEV> nms(std::vector<BoxBEV> boxes, double iou_thresh) {
  std::stable_sort(boxes.begin(), boxes.end(), [](const BoxBEV& a, const BoxBEV& b) { return a.score > b.score; });
  std::vector<BoxBEV> kept;
  for (const auto& b : boxes) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (rotated_iou(b, k) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(b);
  }
  return kept;
}

std::vector<BoxBEV> decode_and_nms(const DetectionMap& det, const BEVGridConfig& grid, double score_thresh,
                                   double nms_iou, std::size_t max_candidates) {
  if (!(score_thresh >= 0.0 && score_thresh <= 1.0) || !(nms_iou >= 0.0 && nms_iou <= 1.0)) {
    throw InvalidArgument("decode_and_nms: thresholds must lie in [0, 1]");
  }
  if (det.cls_logits.shape() != Shape{1, grid.H, grid.W} || det.reg.shape() != Shape{kRegChannels, grid.H, grid.W}) {
    throw InvalidArgument("decode_and_nms: detection maps do not match the grid");
  }
  std::vector<BoxBEV> cand;
  for (std::int64_t row = 0; row < grid.H; ++row) {
    for (std::int64_t col = 0; col < grid.W; ++col) {
      const double z = det.cls_logits[row * grid.W + col];
      const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      if (s >= score_thresh) cand.push_back(decode_cell(det, grid, row, col));
    }
  }
  std::stable_sort(cand.begin(), cand.end(), [](const BoxBEV& a, const BoxBEV& b) { return a.score > b.score; });
  if (cand.size() > max_candidates) cand.resize(max_candidates);
  return nms(std::move(cand), nms_iou);
}

void write_detections_csv(std::ostream& os, std::size_t scene_id, const std::vector<BoxBEV>& boxes, bool header) {
  if (header) os << "scene_id,cx,cy,w,l,yaw,score\n";
  const auto old = os.precision(17);
  for (const auto& b : boxes) {
    os << scene_id << ',' << b.cx << ',' << b.cy << ',' << b.w << ',' << b.l << ',' << b.yaw << ',' << b.score
       << '\n';
  }
  os.precision(old);
}

}  // namespace diffkd
