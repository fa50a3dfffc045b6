#include "diffkd/bev_encoder.hpp"

#include "diffkd/ops.hpp"

#include <algorithm>
#include <cmath>

namespace diffkd {

void BEVGridConfig::validate() const {
  if (H <= 0 || W <= 0 || C <= 0 || pillar_channels <= 0) {
    throw InvalidArgument("grid: H, W and channel counts must be positive");
  }
  if (!(x_max > x_min) || !(y_max > y_min)) throw InvalidArgument("grid: ranges must be positive");
  if (max_points_per_pillar < 1) throw InvalidArgument("grid: max_points_per_pillar must be >= 1");
  if (norm_groups < 1 || C % norm_groups != 0) {
    throw InvalidArgument("grid: C=" + std::to_string(C) + " not divisible by norm_groups=" +
                          std::to_string(norm_groups));
  }
}

void init_encoder_params(ParamSet& params, const BEVGridConfig& grid, std::mt19937_64& rng,
                         const std::string& prefix) {
  grid.validate();
  const auto cp = grid.pillar_channels;
  params.add(prefix + ".pillar.weight",
             Tensor::randn(Shape{cp, kPointFeatures}, rng, std::sqrt(2.0 / kPointFeatures)));
  params.add(prefix + ".pillar.bias", Tensor(Shape{cp}, 0.0));
  params.add(prefix + ".conv1.weight", kaiming_kernel(grid.C, cp, 3, rng));
  params.add(prefix + ".conv1.bias", Tensor(Shape{grid.C}, 0.0));
  params.add(prefix + ".gn1.scale", Tensor(Shape{grid.C}, 1.0));
  params.add(prefix + ".gn1.shift", Tensor(Shape{grid.C}, 0.0));
  params.add(prefix + ".conv2.weight", kaiming_kernel(grid.C, grid.C, 3, rng));
  params.add(prefix + ".conv2.bias", Tensor(Shape{grid.C}, 0.0));
  params.add(prefix + ".gn2.scale", Tensor(Shape{grid.C}, 1.0));
  params.add(prefix + ".gn2.shift", Tensor(Shape{grid.C}, 0.0));
}

namespace {

double sorted_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

PillarOutput pillarize(const PointCloud& cloud, const BEVGridConfig& grid, const ParamSet& params,
                       const std::string& prefix) {
  grid.validate();
  const Tensor& weight = params.at(prefix + ".pillar.weight");
  const Tensor& bias = params.at(prefix + ".pillar.bias");
  const auto cp = grid.pillar_channels;
  if (weight.shape() != Shape{cp, kPointFeatures} || bias.numel() != cp) {
    throw InvalidArgument("pillarize: pillar layer shape " + shape_str(weight.shape()) + " does not match grid (" +
                          std::to_string(cp) + " channels)");
  }
  const auto cells = grid.H * grid.W;
  const double cx = grid.cell_x(), cy = grid.cell_y();
  const double half_x = 0.5 * (grid.x_max - grid.x_min), half_y = 0.5 * (grid.y_max - grid.y_min);

  PillarOutput out;
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(cells));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const double fc = std::floor((p.x - grid.x_min) / cx);
    const double fr = std::floor((p.y - grid.y_min) / cy);
    if (!(fc >= 0 && fc < grid.W && fr >= 0 && fr < grid.H)) {
      ++out.dropped;
      continue;
    }
    const auto cell = static_cast<std::int64_t>(fr) * grid.W + static_cast<std::int64_t>(fc);
    auto& m = members[static_cast<std::size_t>(cell)];
    if (static_cast<int>(m.size()) >= grid.max_points_per_pillar) {
      ++out.truncated;
      continue;
    }
    m.push_back(i);
  }

  // Kept points in cell-major order; each pillar is a contiguous run.
  std::vector<std::int64_t> pillar_cell;
  std::vector<std::int64_t> pillar_start{0};
  std::vector<std::size_t> order;
  for (std::int64_t cell = 0; cell < cells; ++cell) {
    const auto& m = members[static_cast<std::size_t>(cell)];
    if (m.empty()) continue;
    pillar_cell.push_back(cell);
    order.insert(order.end(), m.begin(), m.end());
    pillar_start.push_back(static_cast<std::int64_t>(order.size()));
  }
  const auto n = static_cast<Eigen::Index>(order.size());
  Eigen::MatrixXd feats(n, kPointFeatures);
  std::vector<double> xs, ys, zs;
  for (std::size_t pi = 0; pi < pillar_cell.size(); ++pi) {
    const auto b = pillar_start[pi], e = pillar_start[pi + 1];
    // Sorted sums keep the centroid independent of point order.
    xs.clear();
    ys.clear();
    zs.clear();
    for (auto k = b; k < e; ++k) {
      const auto& p = cloud.points[order[static_cast<std::size_t>(k)]];
      xs.push_back(p.x);
      ys.push_back(p.y);
      zs.push_back(p.z);
    }
    const double cnt = static_cast<double>(e - b);
    const double mx = sorted_sum(xs) / cnt, my = sorted_sum(ys) / cnt, mz = sorted_sum(zs) / cnt;
    const auto row = pillar_cell[pi] / grid.W, col = pillar_cell[pi] % grid.W;
    const double ccx = grid.x_min + (static_cast<double>(col) + 0.5) * cx;
    const double ccy = grid.y_min + (static_cast<double>(row) + 0.5) * cy;
    for (auto k = b; k < e; ++k) {
      const auto& p = cloud.points[order[static_cast<std::size_t>(k)]];
      feats.row(k) << p.x / half_x, p.y / half_y, p.z / 2.0, p.intensity, (p.x - mx) / cx, (p.y - my) / cy,
          (p.z - mz) / 2.0, (p.x - ccx) / cx, (p.y - ccy) / cy;
    }
  }

  Eigen::MatrixXd pre = feats * weight.values().reshaped<Eigen::RowMajor>(cp, kPointFeatures).transpose();
  pre.rowwise() += bias.values().transpose();

  Vector value = Vector::Zero(cp * cells);
  std::vector<std::int64_t> argmax(pillar_cell.size() * static_cast<std::size_t>(cp), -1);
  for (std::size_t pi = 0; pi < pillar_cell.size(); ++pi) {
    for (std::int64_t c = 0; c < cp; ++c) {
      double best = 0.0;
      std::int64_t arg = -1;
      for (auto k = pillar_start[pi]; k < pillar_start[pi + 1]; ++k) {
        const double a = std::max(pre(k, c), 0.0);
        if (arg < 0 || a > best) {
          best = a;
          arg = k;
        }
      }
      value[c * cells + pillar_cell[pi]] = best;
      argmax[pi * static_cast<std::size_t>(cp) + static_cast<std::size_t>(c)] = arg;
    }
  }

  auto backward = [weight, bias, feats = std::move(feats), pre = std::move(pre), argmax = std::move(argmax),
                   pillar_cell = std::move(pillar_cell), cp, cells](const Vector& g) {
    Eigen::MatrixXd dpre = Eigen::MatrixXd::Zero(pre.rows(), cp);
    for (std::size_t pi = 0; pi < pillar_cell.size(); ++pi) {
      for (std::int64_t c = 0; c < cp; ++c) {
        const auto k = argmax[pi * static_cast<std::size_t>(cp) + static_cast<std::size_t>(c)];
        if (pre(k, c) >= 0.0) dpre(k, c) += g[c * cells + pillar_cell[pi]];
      }
    }
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gw = dpre.transpose() * feats;
    weight.accumulate_grad(gw.reshaped<Eigen::RowMajor>());
    bias.accumulate_grad(dpre.colwise().sum().transpose());
  };
  out.feature = Tensor::from_op(Shape{cp, grid.H, grid.W}, std::move(value), {weight, bias}, std::move(backward));
  return out;
}

Tensor encode_backbone(const Tensor& bev, const BEVGridConfig& grid, const ParamSet& params,
                       const std::string& prefix) {
  const auto& w1 = params.at(prefix + ".conv1.weight");
  if (bev.rank() != 3 || bev.dim(0) != w1.dim(1)) {
    throw InvalidArgument("encode_backbone: input " + shape_str(bev.shape()) + " does not match conv1 kernel " +
                          shape_str(w1.shape()));
  }
  Tensor x = conv2d(bev, w1, params.at(prefix + ".conv1.bias"), 1, 1);
  x = relu(group_norm(x, grid.norm_groups, 1e-5, params.at(prefix + ".gn1.scale"), params.at(prefix + ".gn1.shift")));
  x = conv2d(x, params.at(prefix + ".conv2.weight"), params.at(prefix + ".conv2.bias"), 1, 1);
  return relu(group_norm(x, grid.norm_groups, 1e-5, params.at(prefix + ".gn2.scale"), params.at(prefix + ".gn2.shift")));
}

}  // namespace diffkd
