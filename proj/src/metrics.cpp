#include "diffkd/metrics.hpp"

#include "diffkd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace diffkd {

double rotated_iou(const BoxBEV& a, const BoxBEV& b) {
  const double area_a = a.area(), area_b = b.area();
  if (!(area_a > 0.0) || !(area_b > 0.0)) return 0.0;
  const double ra = 0.5 * std::hypot(a.w, a.l), rb = 0.5 * std::hypot(b.w, b.l);
  if (std::hypot(a.cx - b.cx, a.cy - b.cy) >= ra + rb) return 0.0;
  const auto ca = a.corners(), cb = b.corners();
  const Polygon pa(ca.begin(), ca.end()), pb(cb.begin(), cb.end());
  const double inter = polygon_area(clip_convex(pa, pb));
  if (!(inter > 0.0)) return 0.0;
  return std::clamp(inter / (area_a + area_b - inter), 0.0, 1.0);
}

PrCurve precision_recall(const std::vector<SceneDetections>& scenes, double iou_thresh) {
  struct Ref {
    std::size_t scene, index;
    double score;
  };
  std::vector<Ref> refs;
  PrCurve pr;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    pr.num_gt += scenes[s].gts.size();
    for (std::size_t i = 0; i < scenes[s].preds.size(); ++i) refs.push_back({s, i, scenes[s].preds[i].score});
  }
  std::stable_sort(refs.begin(), refs.end(), [](const Ref& x, const Ref& y) { return x.score > y.score; });
  std::vector<std::vector<char>> used(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s) used[s].assign(scenes[s].gts.size(), 0);
  std::size_t tp = 0;
  for (std::size_t k = 0; k < refs.size(); ++k) {
    const auto& sc = scenes[refs[k].scene];
    const auto& p = sc.preds[refs[k].index];
    double best = -1.0;
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < sc.gts.size(); ++j) {
      if (used[refs[k].scene][j]) continue;
      const double iou = rotated_iou(p, sc.gts[j]);
      if (iou > best) {
        best = iou;
        best_j = j;
      }
    }
    if (best >= iou_thresh && best >= 0.0) {
      used[refs[k].scene][best_j] = 1;
      ++tp;
    }
    pr.precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    pr.recall.push_back(pr.num_gt ? static_cast<double>(tp) / static_cast<double>(pr.num_gt) : 0.0);
  }
  return pr;
}

double interpolated_ap(const std::vector<double>& precision, const std::vector<double>& recall) {
  double ap = 0.0;
  for (int i = 0; i < kApRecallPoints; ++i) {
    const double r = static_cast<double>(i) / (kApRecallPoints - 1);
    double best = 0.0;
    for (std::size_t k = 0; k < recall.size(); ++k) {
      if (recall[k] >= r - 1e-12) best = std::max(best, precision[k]);
    }
    ap += best;
  }
  return ap / kApRecallPoints;
}

double average_precision(const std::vector<SceneDetections>& scenes, double iou_thresh) {
  std::size_t num_gt = 0, num_pred = 0;
  for (const auto& s : scenes) {
    num_gt += s.gts.size();
    num_pred += s.preds.size();
  }
  if (num_gt == 0) return num_pred == 0 ? 1.0 : 0.0;
  if (num_pred == 0) return 0.0;
  const PrCurve pr = precision_recall(scenes, iou_thresh);
  return interpolated_ap(pr.precision, pr.recall);
}

double average_precision(const std::vector<BoxBEV>& preds, const std::vector<BoxBEV>& gts, double iou_thresh) {
  return average_precision(std::vector<SceneDetections>{{preds, gts}}, iou_thresh);
}

Robustness compute_rce_mrce(std::pair<double, double> clean,
                            const std::vector<std::pair<double, double>>& corrupted) {
  if (!(clean.first > 0.0) || !(clean.second > 0.0)) {
    throw UndefinedMetric("RCE undefined: clean AP must be positive");
  }
  if (corrupted.empty()) throw InvalidArgument("compute_rce_mrce: no corrupted conditions");
  Robustness r;
  for (const auto& [ap50, ap70] : corrupted) {
    r.rce50 += (clean.first - ap50) / clean.first;
    r.rce70 += (clean.second - ap70) / clean.second;
  }
  r.rce50 /= static_cast<double>(corrupted.size());
  r.rce70 /= static_cast<double>(corrupted.size());
  r.mrce = (r.rce50 + r.rce70) / 2.0;
  return r;
}

}  // namespace diffkd
