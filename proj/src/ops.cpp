#include "diffkd/ops.hpp"

#include <algorithm>
#include <cmath>

namespace diffkd {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

void require_rank3(const Tensor& x, const char* op) {
  if (x.rank() != 3) {
    throw InvalidArgument(std::string(op) + ": expected CxHxW input, got " + shape_str(x.shape()));
  }
}

// Index maps for a broadcast pair; empty vectors mean identity indexing.
struct Broadcast {
  Shape out;
  std::vector<std::int64_t> ia, ib;
};

std::vector<std::int64_t> broadcast_index(const Shape& in, const Shape& out) {
  const auto r = out.size();
  std::vector<std::int64_t> in_stride(r), out_stride(r);
  std::int64_t s = 1;
  for (std::size_t d = r; d-- > 0;) {
    in_stride[d] = in[d] == 1 ? 0 : s;
    s *= in[d];
  }
  const auto n = shape_numel(out);
  std::vector<std::int64_t> idx(n);
  std::vector<std::int64_t> pos(r, 0);
  for (std::int64_t k = 0; k < n; ++k) {
    std::int64_t off = 0;
    for (std::size_t d = 0; d < r; ++d) off += pos[d] * in_stride[d];
    idx[k] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++pos[d] < out[d]) break;
      pos[d] = 0;
    }
  }
  return idx;
}

Broadcast plan_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  Broadcast plan;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) {
    plan.out = sa;
    return plan;
  }
  if (b.numel() == 1) {
    plan.out = sa;
    plan.ib.assign(a.numel(), 0);
    return plan;
  }
  if (a.numel() == 1) {
    plan.out = sb;
    plan.ia.assign(b.numel(), 0);
    return plan;
  }
  if (sa.size() != sb.size()) {
    throw InvalidArgument(std::string(op) + ": incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  plan.out.resize(sa.size());
  for (std::size_t d = 0; d < sa.size(); ++d) {
    if (sa[d] == sb[d] || sb[d] == 1) {
      plan.out[d] = sa[d];
    } else if (sa[d] == 1) {
      plan.out[d] = sb[d];
    } else {
      throw InvalidArgument(std::string(op) + ": incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
    }
  }
  if (sa != plan.out) plan.ia = broadcast_index(sa, plan.out);
  if (sb != plan.out) plan.ib = broadcast_index(sb, plan.out);
  return plan;
}

Vector gather(const Vector& v, const std::vector<std::int64_t>& idx) {
  if (idx.empty()) return v;
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = v[idx[k]];
  return out;
}

Vector scatter_add(const Vector& g, const std::vector<std::int64_t>& idx, std::int64_t n) {
  if (idx.empty()) return g;
  Vector out = Vector::Zero(n);
  for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] += g[k];
  return out;
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  auto plan = plan_broadcast(a, b, name);
  Vector va = gather(a.values(), plan.ia);
  Vector vb = gather(b.values(), plan.ib);
  Vector out;
  switch (kind) {
    case BinaryKind::add: out = va + vb; break;
    case BinaryKind::sub: out = va - vb; break;
    case BinaryKind::mul: out = va.cwiseProduct(vb); break;
  }
  const auto na = a.numel();
  const auto nb = b.numel();
  auto backward = [a, b, kind, ia = std::move(plan.ia), ib = std::move(plan.ib), va = std::move(va),
                   vb = std::move(vb), na, nb](const Vector& g) {
    if (a.requires_grad()) {
      a.accumulate_grad(scatter_add(kind == BinaryKind::mul ? Vector(g.cwiseProduct(vb)) : g, ia, na));
    }
    if (b.requires_grad()) {
      Vector gb = kind == BinaryKind::mul ? Vector(g.cwiseProduct(va)) : kind == BinaryKind::sub ? Vector(-g) : g;
      b.accumulate_grad(scatter_add(gb, ib, nb));
    }
  };
  return Tensor::from_op(plan.out, std::move(out), {a, b}, std::move(backward));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul, "mul"); }

Tensor scale(const Tensor& x, double s) {
  return Tensor::from_op(x.shape(), x.values() * s, {x}, [x, s](const Vector& g) { x.accumulate_grad(g * s); });
}

Tensor add_scalar(const Tensor& x, double s) {
  return Tensor::from_op(x.shape(), x.values().array() + s, {x}, [x](const Vector& g) { x.accumulate_grad(g); });
}

Tensor relu(const Tensor& x) {
  Vector y = x.values().cwiseMax(0.0);
  // Subgradient 1 at exactly zero so zero-initialized affine stages can leave
  // their starting point.
  return Tensor::from_op(x.shape(), std::move(y), {x}, [x](const Vector& g) {
    x.accumulate_grad((x.values().array() >= 0.0).select(g, 0.0));
  });
}

Tensor sigmoid(const Tensor& x) {
  Vector y = x.values().unaryExpr([](double v) {
    return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  });
  Vector yc = y;
  return Tensor::from_op(x.shape(), std::move(y), {x}, [x, yc = std::move(yc)](const Vector& g) {
    x.accumulate_grad(g.cwiseProduct(yc.cwiseProduct((1.0 - yc.array()).matrix())));
  });
}

Tensor softplus(const Tensor& x) {
  Vector y = x.values().unaryExpr([](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
  return Tensor::from_op(x.shape(), std::move(y), {x}, [x](const Vector& g) {
    Vector s = x.values().unaryExpr([](double v) {
      return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    });
    x.accumulate_grad(g.cwiseProduct(s));
  });
}

Tensor square(const Tensor& x) {
  return Tensor::from_op(x.shape(), x.values().cwiseAbs2(), {x},
                         [x](const Vector& g) { x.accumulate_grad(2.0 * g.cwiseProduct(x.values())); });
}

namespace {

struct AxisSplit {
  std::int64_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis, const char* op) {
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw InvalidArgument(std::string(op) + ": axis out of range for shape " + shape_str(s));
  }
  AxisSplit sp;
  for (int d = 0; d < axis; ++d) sp.outer *= s[d];
  sp.n = s[axis];
  for (int d = axis + 1; d < r; ++d) sp.inner *= s[d];
  return sp;
}

Vector softmax_values(const Vector& x, const AxisSplit& sp, bool log_space) {
  Vector y(x.size());
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      const std::int64_t base = o * sp.n * sp.inner + i;
      double m = -std::numeric_limits<double>::infinity();
      for (std::int64_t k = 0; k < sp.n; ++k) m = std::max(m, x[base + k * sp.inner]);
      double z = 0.0;
      for (std::int64_t k = 0; k < sp.n; ++k) z += std::exp(x[base + k * sp.inner] - m);
      const double logz = std::log(z);
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const double v = x[base + k * sp.inner] - m;
        y[base + k * sp.inner] = log_space ? v - logz : std::exp(v) / z;
      }
    }
  }
  return y;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const auto sp = split_axis(x.shape(), axis, "softmax");
  Vector y = softmax_values(x.values(), sp, false);
  Vector yc = y;
  return Tensor::from_op(x.shape(), std::move(y), {x}, [x, sp, yc = std::move(yc)](const Vector& g) {
    Vector gx(g.size());
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t i = 0; i < sp.inner; ++i) {
        const std::int64_t base = o * sp.n * sp.inner + i;
        double dot = 0.0;
        for (std::int64_t k = 0; k < sp.n; ++k) dot += g[base + k * sp.inner] * yc[base + k * sp.inner];
        for (std::int64_t k = 0; k < sp.n; ++k) {
          const auto j = base + k * sp.inner;
          gx[j] = yc[j] * (g[j] - dot);
        }
      }
    }
    x.accumulate_grad(gx);
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const auto sp = split_axis(x.shape(), axis, "log_softmax");
  Vector y = softmax_values(x.values(), sp, true);
  Vector p = y.array().exp();
  return Tensor::from_op(x.shape(), std::move(y), {x}, [x, sp, p = std::move(p)](const Vector& g) {
    Vector gx(g.size());
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t i = 0; i < sp.inner; ++i) {
        const std::int64_t base = o * sp.n * sp.inner + i;
        double gs = 0.0;
        for (std::int64_t k = 0; k < sp.n; ++k) gs += g[base + k * sp.inner];
        for (std::int64_t k = 0; k < sp.n; ++k) {
          const auto j = base + k * sp.inner;
          gx[j] = g[j] - p[j] * gs;
        }
      }
    }
    x.accumulate_grad(gx);
  });
}

Tensor activate(const Tensor& x, Activation kind, int axis) {
  switch (kind) {
    case Activation::relu: return relu(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::softmax: return softmax(x, axis);
  }
  throw InvalidArgument("unknown activation");
}

Tensor sum(const Tensor& x) {
  const auto n = x.numel();
  return Tensor::from_op(Shape{1}, Vector::Constant(1, x.values().sum()), {x},
                         [x, n](const Vector& g) { x.accumulate_grad(Vector::Constant(n, g[0])); });
}

Tensor mean(const Tensor& x) {
  const auto n = x.numel();
  if (n == 0) throw InvalidArgument("mean of empty tensor");
  return Tensor::from_op(Shape{1}, Vector::Constant(1, x.values().mean()), {x}, [x, n](const Vector& g) {
    x.accumulate_grad(Vector::Constant(n, g[0] / static_cast<double>(n)));
  });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_channels: no inputs");
  for (const auto& p : parts) require_rank3(p, "concat_channels");
  const auto h = parts[0].dim(1), w = parts[0].dim(2);
  std::int64_t c = 0;
  for (const auto& p : parts) {
    if (p.dim(1) != h || p.dim(2) != w) {
      throw InvalidArgument("concat_channels: spatial mismatch " + shape_str(parts[0].shape()) + " vs " +
                            shape_str(p.shape()));
    }
    c += p.dim(0);
  }
  Vector out(c * h * w);
  std::int64_t off = 0;
  for (const auto& p : parts) {
    out.segment(off, p.numel()) = p.values();
    off += p.numel();
  }
  return Tensor::from_op(Shape{c, h, w}, std::move(out), parts, [parts](const Vector& g) {
    std::int64_t o = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) p.accumulate_grad(g.segment(o, p.numel()));
      o += p.numel();
    }
  });
}

namespace {

struct ConvGeometry {
  std::int64_t c_in, h, w, c_out, k, stride, pad, groups, cg, og, ho, wo;
  std::int64_t rows() const { return cg * k * k; }
  std::int64_t cols() const { return ho * wo; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* x, const ConvGeometry& g, std::int64_t group, RowMatrix& cols) {
  cols.resize(g.rows(), g.cols());
  for (std::int64_t c = 0; c < g.cg; ++c) {
    const double* xc = x + (group * g.cg + c) * g.h * g.w;
    for (std::int64_t ki = 0; ki < g.k; ++ki) {
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        double* row = cols.data() + ((c * g.k + ki) * g.k + kj) * g.cols();
        for (std::int64_t oh = 0; oh < g.ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + ki;
          double* dst = row + oh * g.wo;
          if (ih < 0 || ih >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = xc + ih * g.w;
          for (std::int64_t ow = 0; ow < g.wo; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + kj;
            dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const RowMatrix& cols, const ConvGeometry& g, std::int64_t group, double* gx) {
  for (std::int64_t c = 0; c < g.cg; ++c) {
    double* xc = gx + (group * g.cg + c) * g.h * g.w;
    for (std::int64_t ki = 0; ki < g.k; ++ki) {
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        const double* row = cols.data() + ((c * g.k + ki) * g.k + kj) * g.cols();
        for (std::int64_t oh = 0; oh < g.ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.h) continue;
          double* dst = xc + ih * g.w;
          const double* src = row + oh * g.wo;
          for (std::int64_t ow = 0; ow < g.wo; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}


// Stride-1 convolution as k*k shifted GEMMs over a zero-padded copy of the
// input. Output columns are computed on the padded width and cropped, so every
// tap reads a contiguous block instead of an im2col matrix.
struct ShiftedLayout {
  std::int64_t hp, wp, len, span;  // padded dims, padded row length, columns per output block
};

ShiftedLayout shifted_layout(const ConvGeometry& g) {
  ShiftedLayout s{};
  s.hp = g.h + 2 * g.pad;
  s.wp = g.w + 2 * g.pad;
  s.len = s.hp * s.wp + g.k;
  s.span = g.ho * s.wp;
  return s;
}

void pad_input(const double* x, const ConvGeometry& g, const ShiftedLayout& s, std::int64_t group, RowMatrix& xp) {
  xp.setZero(g.cg, s.len);
  for (std::int64_t c = 0; c < g.cg; ++c) {
    const double* xc = x + (group * g.cg + c) * g.h * g.w;
    double* dst = xp.data() + c * s.len;
    for (std::int64_t r = 0; r < g.h; ++r) {
      std::copy(xc + r * g.w, xc + (r + 1) * g.w, dst + (r + g.pad) * s.wp + g.pad);
    }
  }
}

using TapMap = Eigen::Map<const RowMatrix, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
using MutTapMap = Eigen::Map<RowMatrix, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;

// og x cg view of kernel tap (ki, kj) for one group.
TapMap kernel_tap(const double* w, const ConvGeometry& g, std::int64_t group, std::int64_t ki, std::int64_t kj) {
  const std::int64_t kk = g.k * g.k;
  return TapMap(w + group * g.og * g.cg * kk + ki * g.k + kj, g.og, g.cg,
                Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(g.cg * kk, kk));
}

MutTapMap kernel_tap(double* w, const ConvGeometry& g, std::int64_t group, std::int64_t ki, std::int64_t kj) {
  const std::int64_t kk = g.k * g.k;
  return MutTapMap(w + group * g.og * g.cg * kk + ki * g.k + kj, g.og, g.cg,
                   Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(g.cg * kk, kk));
}

void shifted_forward(const double* x, const double* w, const ConvGeometry& g, double* out) {
  const ShiftedLayout s = shifted_layout(g);
  RowMatrix xp, yp(g.og, s.span);
  for (std::int64_t grp = 0; grp < g.groups; ++grp) {
    pad_input(x, g, s, grp, xp);
    yp.setZero();
    for (std::int64_t ki = 0; ki < g.k; ++ki) {
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        yp.noalias() += kernel_tap(w, g, grp, ki, kj) * xp.middleCols(ki * s.wp + kj, s.span);
      }
    }
    for (std::int64_t o = 0; o < g.og; ++o) {
      double* dst = out + (grp * g.og + o) * g.ho * g.wo;
      for (std::int64_t r = 0; r < g.ho; ++r) {
        const double* src = yp.data() + o * s.span + r * s.wp;
        std::copy(src, src + g.wo, dst + r * g.wo);
      }
    }
  }
}

void shifted_backward(const double* x, const double* w, const double* gout, const ConvGeometry& g, double* gw,
                      double* gx) {
  const ShiftedLayout s = shifted_layout(g);
  RowMatrix xp, gy(g.og, s.span), gxp;
  for (std::int64_t grp = 0; grp < g.groups; ++grp) {
    gy.setZero();
    for (std::int64_t o = 0; o < g.og; ++o) {
      const double* src = gout + (grp * g.og + o) * g.ho * g.wo;
      for (std::int64_t r = 0; r < g.ho; ++r) {
        std::copy(src + r * g.wo, src + (r + 1) * g.wo, gy.data() + o * s.span + r * s.wp);
      }
    }
    if (gw) pad_input(x, g, s, grp, xp);
    if (gx) gxp.setZero(g.cg, s.len);
    for (std::int64_t ki = 0; ki < g.k; ++ki) {
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        const std::int64_t off = ki * s.wp + kj;
        if (gw) kernel_tap(gw, g, grp, ki, kj).noalias() = gy * xp.middleCols(off, s.span).transpose();
        if (gx) gxp.middleCols(off, s.span).noalias() += kernel_tap(w, g, grp, ki, kj).transpose() * gy;
      }
    }
    if (gx) {
      for (std::int64_t c = 0; c < g.cg; ++c) {
        double* dst = gx + (grp * g.cg + c) * g.h * g.w;
        const double* src = gxp.data() + c * s.len;
        for (std::int64_t r = 0; r < g.h; ++r) {
          const double* row = src + (r + g.pad) * s.wp + g.pad;
          for (std::int64_t q = 0; q < g.w; ++q) dst[r * g.w + q] += row[q];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int padding, int groups) {
  require_rank3(input, "conv2d");
  if (kernel.rank() != 4) throw InvalidArgument("conv2d: kernel must be 4-d, got " + shape_str(kernel.shape()));
  if (stride < 1 || padding < 0 || groups < 1) throw InvalidArgument("conv2d: invalid stride/padding/groups");
  ConvGeometry g{};
  g.c_in = input.dim(0);
  g.h = input.dim(1);
  g.w = input.dim(2);
  g.c_out = kernel.dim(0);
  g.k = kernel.dim(2);
  g.stride = stride;
  g.pad = padding;
  g.groups = groups;
  if (kernel.dim(3) != g.k || g.c_in % groups != 0 || g.c_out % groups != 0 || kernel.dim(1) != g.c_in / groups) {
    throw InvalidArgument("conv2d: kernel " + shape_str(kernel.shape()) + " incompatible with input " +
                          shape_str(input.shape()) + " and groups=" + std::to_string(groups));
  }
  if (bias.defined() && bias.numel() != g.c_out) {
    throw InvalidArgument("conv2d: bias " + shape_str(bias.shape()) + " does not match kernel " +
                          shape_str(kernel.shape()));
  }
  g.cg = g.c_in / groups;
  g.og = g.c_out / groups;
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) {
    throw InvalidArgument("conv2d: input " + shape_str(input.shape()) + " smaller than kernel " +
                          shape_str(kernel.shape()));
  }
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;

  Vector out(g.c_out * g.cols());
  ConstRowMap wmat(kernel.values().data(), g.c_out, g.rows());
  RowMap omat(out.data(), g.c_out, g.cols());
  RowMatrix cols;
  const bool shifted = g.stride == 1 && !g.pointwise();
  if (shifted) shifted_forward(input.values().data(), kernel.values().data(), g, out.data());
  for (std::int64_t grp = 0; grp < groups && !shifted; ++grp) {
    auto wg = wmat.middleRows(grp * g.og, g.og);
    auto og = omat.middleRows(grp * g.og, g.og);
    if (g.pointwise()) {
      ConstRowMap xg(input.values().data() + grp * g.cg * g.h * g.w, g.cg, g.cols());
      og.noalias() = wg * xg;
    } else {
      im2col(input.values().data(), g, grp, cols);
      og.noalias() = wg * cols;
    }
  }
  if (bias.defined()) omat.colwise() += bias.values();

  auto backward = [input, kernel, bias, g, shifted](const Vector& gout) {
    ConstRowMap gmat(gout.data(), g.c_out, g.cols());
    ConstRowMap wmat(kernel.values().data(), g.c_out, g.rows());
    Vector gw = Vector::Zero(kernel.numel());
    RowMap gwmat(gw.data(), g.c_out, g.rows());
    Vector gx;
    if (input.requires_grad()) gx = Vector::Zero(input.numel());
    RowMatrix cols, gcols;
    if (shifted) {
      shifted_backward(input.values().data(), kernel.values().data(), gout.data(), g,
                       kernel.requires_grad() ? gw.data() : nullptr, input.requires_grad() ? gx.data() : nullptr);
    }
    for (std::int64_t grp = 0; grp < g.groups && !shifted; ++grp) {
      auto gg = gmat.middleRows(grp * g.og, g.og);
      if (g.pointwise()) {
        ConstRowMap xg(input.values().data() + grp * g.cg * g.h * g.w, g.cg, g.cols());
        if (kernel.requires_grad()) gwmat.middleRows(grp * g.og, g.og).noalias() = gg * xg.transpose();
        if (input.requires_grad()) {
          RowMap gxg(gx.data() + grp * g.cg * g.h * g.w, g.cg, g.cols());
          gxg.noalias() += wmat.middleRows(grp * g.og, g.og).transpose() * gg;
        }
      } else {
        if (kernel.requires_grad()) {
          im2col(input.values().data(), g, grp, cols);
          gwmat.middleRows(grp * g.og, g.og).noalias() = gg * cols.transpose();
        }
        if (input.requires_grad()) {
          gcols.noalias() = wmat.middleRows(grp * g.og, g.og).transpose() * gg;
          col2im_add(gcols, g, grp, gx.data());
        }
      }
    }
    if (kernel.requires_grad()) kernel.accumulate_grad(gw);
    if (input.requires_grad()) input.accumulate_grad(gx);
    if (bias.defined() && bias.requires_grad()) bias.accumulate_grad(gmat.rowwise().sum());
  };
  return Tensor::from_op(Shape{g.c_out, g.ho, g.wo}, std::move(out), {input, kernel, bias}, std::move(backward));
}

Tensor group_norm(const Tensor& input, int num_groups, double eps, const Tensor& scale, const Tensor& shift) {
  require_rank3(input, "group_norm");
  const auto c = input.dim(0);
  if (num_groups < 1 || c % num_groups != 0) {
    throw InvalidArgument("group_norm: " + std::to_string(c) + " channels not divisible into " +
                          std::to_string(num_groups) + " groups");
  }
  if (!(eps > 0.0)) throw InvalidArgument("group_norm: eps must be positive");
  if ((scale.defined() && scale.numel() != c) || (shift.defined() && shift.numel() != c)) {
    throw InvalidArgument("group_norm: affine parameters must have " + std::to_string(c) + " entries");
  }
  const auto hw = input.dim(1) * input.dim(2);
  const auto per_group = (c / num_groups) * hw;
  const auto& x = input.values();
  Vector xhat(x.size());
  Vector rstd(num_groups);
  for (int gi = 0; gi < num_groups; ++gi) {
    auto seg = x.segment(gi * per_group, per_group);
    const double mu = seg.mean();
    const double var = (seg.array() - mu).square().mean();
    rstd[gi] = 1.0 / std::sqrt(var + eps);
    xhat.segment(gi * per_group, per_group) = (seg.array() - mu) * rstd[gi];
  }
  Vector y = xhat;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    auto seg = y.segment(ch * hw, hw);
    if (scale.defined()) seg *= scale[ch];
    if (shift.defined()) seg.array() += shift[ch];
  }
  auto backward = [input, scale, shift, xhat = std::move(xhat), rstd = std::move(rstd), num_groups, c, hw,
                   per_group](const Vector& g) {
    Vector gxhat = g;
    if (scale.defined()) {
      Vector gs(c);
      for (std::int64_t ch = 0; ch < c; ++ch) {
        gs[ch] = g.segment(ch * hw, hw).dot(xhat.segment(ch * hw, hw));
        gxhat.segment(ch * hw, hw) *= scale[ch];
      }
      if (scale.requires_grad()) scale.accumulate_grad(gs);
    }
    if (shift.defined() && shift.requires_grad()) {
      Vector gb(c);
      for (std::int64_t ch = 0; ch < c; ++ch) gb[ch] = g.segment(ch * hw, hw).sum();
      shift.accumulate_grad(gb);
    }
    if (!input.requires_grad()) return;
    Vector gx(gxhat.size());
    for (int gi = 0; gi < num_groups; ++gi) {
      auto gh = gxhat.segment(gi * per_group, per_group);
      auto xh = xhat.segment(gi * per_group, per_group);
      const double m1 = gh.mean();
      const double m2 = gh.dot(xh) / static_cast<double>(per_group);
      gx.segment(gi * per_group, per_group) = rstd[gi] * (gh.array() - m1 - xh.array() * m2);
    }
    input.accumulate_grad(gx);
  };
  return Tensor::from_op(input.shape(), std::move(y), {input, scale, shift}, std::move(backward));
}

Tensor upsample2x(const Tensor& x) {
  require_rank3(x, "upsample2x");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Vector out(c * 4 * h * w);
  const auto& v = x.values();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t i = 0; i < 2 * h; ++i) {
      for (std::int64_t j = 0; j < 2 * w; ++j) out[(ch * 2 * h + i) * 2 * w + j] = v[(ch * h + i / 2) * w + j / 2];
    }
  }
  return Tensor::from_op(Shape{c, 2 * h, 2 * w}, std::move(out), {x}, [x, c, h, w](const Vector& g) {
    Vector gx = Vector::Zero(c * h * w);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      for (std::int64_t i = 0; i < 2 * h; ++i) {
        for (std::int64_t j = 0; j < 2 * w; ++j) gx[(ch * h + i / 2) * w + j / 2] += g[(ch * 2 * h + i) * 2 * w + j];
      }
    }
    x.accumulate_grad(gx);
  });
}

Tensor weighted_sum(const std::vector<Tensor>& xs, const Tensor& weights) {
  if (xs.empty() || static_cast<std::int64_t>(xs.size()) != weights.numel()) {
    throw InvalidArgument("weighted_sum: " + std::to_string(xs.size()) + " inputs but " +
                          std::to_string(weights.numel()) + " weights");
  }
  Vector out = Vector::Zero(xs[0].numel());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].shape() != xs[0].shape()) {
      throw InvalidArgument("weighted_sum: shape mismatch " + shape_str(xs[0].shape()) + " vs " +
                            shape_str(xs[i].shape()));
    }
    out += weights[static_cast<std::int64_t>(i)] * xs[i].values();
  }
  std::vector<Tensor> parents = xs;
  parents.push_back(weights);
  return Tensor::from_op(xs[0].shape(), std::move(out), parents, [xs, weights](const Vector& g) {
    Vector gw(weights.numel());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (xs[i].requires_grad()) xs[i].accumulate_grad(weights[static_cast<std::int64_t>(i)] * g);
      gw[static_cast<Eigen::Index>(i)] = g.dot(xs[i].values());
    }
    if (weights.requires_grad()) weights.accumulate_grad(gw);
  });
}

Tensor normalized_positive(const Tensor& raw, double eps) {
  const auto n = raw.numel();
  Vector s = raw.values().unaryExpr([](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
  const double total = s.sum() + eps;
  Vector w = s / total;
  return Tensor::from_op(raw.shape(), std::move(w), {raw}, [raw, s, total, n](const Vector& g) {
    const double gs_common = g.dot(s) / (total * total);
    Vector gr(n);
    for (std::int64_t j = 0; j < n; ++j) {
      const double r = raw[j];
      const double sig = r >= 0 ? 1.0 / (1.0 + std::exp(-r)) : std::exp(r) / (1.0 + std::exp(r));
      gr[j] = (g[j] / total - gs_common) * sig;
    }
    raw.accumulate_grad(gr);
  });
}

}  // namespace diffkd
