#include "tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "common/compensated.hpp"
#include "common/errors.hpp"

namespace fds {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// How `b` maps onto the elements of `a`.
struct BroadcastPlan {
  enum class Kind { Same, Scalar, Suffix, General } kind = Kind::Same;
  std::size_t b_numel = 0;
  std::vector<std::size_t> map;  // General only

  std::size_t operator()(std::size_t i) const {
    switch (kind) {
      case Kind::Same: return i;
      case Kind::Scalar: return 0;
      case Kind::Suffix: return i % b_numel;
      case Kind::General: return map[i];
    }
    return 0;
  }
};

bool broadcastable(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  const std::size_t off = a.size() - b.size();
  for (std::size_t i = 0; i < b.size(); ++i)
    if (b[i] != a[off + i] && b[i] != 1) return false;
  return true;
}

BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  if (!broadcastable(a, b))
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(b) + " onto " +
                     shape_string(a));
  BroadcastPlan p;
  p.b_numel = numel(b);
  if (a == b) {
    p.kind = BroadcastPlan::Kind::Same;
    return p;
  }
  if (p.b_numel == 1) {
    p.kind = BroadcastPlan::Kind::Scalar;
    return p;
  }
  const std::size_t off = a.size() - b.size();
  bool suffix = std::none_of(b.begin(), b.end(), [](std::size_t d) { return d == 1; });
  if (suffix) {
    p.kind = BroadcastPlan::Kind::Suffix;
    return p;
  }
  p.kind = BroadcastPlan::Kind::General;
  const std::size_t n = numel(a);
  p.map.resize(n);
  std::vector<std::size_t> bstride(b.size(), 1);
  for (std::size_t i = b.size(); i-- > 1;) bstride[i - 1] = bstride[i] * b[i];
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat, bi = 0;
    for (std::size_t ax = a.size(); ax-- > 0;) {
      const std::size_t coord = rem % a[ax];
      rem /= a[ax];
      if (ax >= off) {
        const std::size_t bax = ax - off;
        if (b[bax] != 1) bi += coord * bstride[bax];
      }
    }
    p.map[flat] = bi;
  }
  return p;
}

template <class Fwd, class Bwd>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Bwd dfdx) {
  auto x = a.values();
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return make_op(name, a.shape(), std::move(out), {a}, [dfdx](BackwardContext& ctx) {
    auto g = ctx.grad(0);
    auto go = ctx.out_grad();
    auto xv = ctx.value(0);
    auto yv = ctx.out_value();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * dfdx(xv[i], yv[i]);
  });
}

struct Image {
  std::size_t b, h, w, c;
};

Image as_image(const char* op, const Tensor& x) {
  const auto& s = x.shape();
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  throw ShapeError(std::string(op) + ": expected [B,H,W,C] or [H,W,C], got " + shape_string(s));
}

Shape image_shape(const Tensor& like, std::size_t b, std::size_t h, std::size_t w, std::size_t c) {
  if (like.rank() == 3) return {h, w, c};
  return {b, h, w, c};
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.numel() < b.numel()) return add(b, a);
  auto plan = plan_broadcast("add", a.shape(), b.shape());
  auto av = a.values();
  auto bv = b.values();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[plan(i)];
  return make_op("add", a.shape(), std::move(out), {a, b}, [plan](BackwardContext& ctx) {
    auto go = ctx.out_grad();
    if (ctx.needs(0)) {
      auto g = ctx.grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
    }
    if (ctx.needs(1)) {
      auto g = ctx.grad(1);
      for (std::size_t i = 0; i < go.size(); ++i) g[plan(i)] += go[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto plan = plan_broadcast("sub", a.shape(), b.shape());
  auto av = a.values();
  auto bv = b.values();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[plan(i)];
  return make_op("sub", a.shape(), std::move(out), {a, b}, [plan](BackwardContext& ctx) {
    auto go = ctx.out_grad();
    if (ctx.needs(0)) {
      auto g = ctx.grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
    }
    if (ctx.needs(1)) {
      auto g = ctx.grad(1);
      for (std::size_t i = 0; i < go.size(); ++i) g[plan(i)] -= go[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.numel() < b.numel()) return mul(b, a);
  auto plan = plan_broadcast("mul", a.shape(), b.shape());
  auto av = a.values();
  auto bv = b.values();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[plan(i)];
  return make_op("mul", a.shape(), std::move(out), {a, b}, [plan](BackwardContext& ctx) {
    auto go = ctx.out_grad();
    auto av = ctx.value(0);
    auto bv = ctx.value(1);
    if (ctx.needs(0)) {
      auto g = ctx.grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * bv[plan(i)];
    }
    if (ctx.needs(1)) {
      auto g = ctx.grad(1);
      for (std::size_t i = 0; i < go.size(); ++i) g[plan(i)] += go[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, Real factor) {
  return unary(
      "scale", a, [factor](Real x) { return x * factor; },
      [factor](Real, Real) { return factor; });
}

Tensor add_scalar(const Tensor& a, Real value) {
  return unary(
      "add_scalar", a, [value](Real x) { return x + value; }, [](Real, Real) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

Tensor log(const Tensor& a) {
  for (Real v : a.values())
    if (!(v > 0.0)) throw NumericError("log: non-positive input " + std::to_string(v));
  return unary(
      "log", a, [](Real x) { return std::log(x); }, [](Real x, Real) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a, [](Real x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](Real, Real y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
  return unary(
      "silu", a, [](Real x) { return x / (1.0 + std::exp(-x)); },
      [](Real x, Real) {
        const Real s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](Real x) { return x > 0.0 ? x : 0.0; },
      [](Real x, Real) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& a) {
  return unary(
      "softplus", a,
      [](Real x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](Real x, Real) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor sum(const Tensor& a) {
  CompensatedSum s;
  for (Real v : a.values()) s += v;
  return make_op("sum", {}, {s.value()}, {a}, [](BackwardContext& ctx) {
    auto g = ctx.grad(0);
    const Real go = ctx.out_grad()[0];
    for (auto& v : g) v += go;
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<Real>(a.numel()));
}

Tensor sum_leading(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("sum_leading: scalar input");
  Shape out_shape(a.shape().begin() + 1, a.shape().end());
  const std::size_t inner = numel(out_shape);
  const std::size_t lead = a.dim(0);
  auto av = a.values();
  std::vector<Real> out(inner, 0.0);
  for (std::size_t b = 0; b < lead; ++b)
    for (std::size_t i = 0; i < inner; ++i) out[i] += av[b * inner + i];
  return make_op("sum_leading", out_shape, std::move(out), {a},
                 [inner, lead](BackwardContext& ctx) {
                   auto g = ctx.grad(0);
                   auto go = ctx.out_grad();
                   for (std::size_t b = 0; b < lead; ++b)
                     for (std::size_t i = 0; i < inner; ++i) g[b * inner + i] += go[i];
                 });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  return linear(a, b);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (w.rank() != 2 || x.rank() == 0 || x.shape().back() != w.dim(0))
    throw ShapeError("linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                     shape_string(w.shape()));
  const std::size_t k = w.dim(0), n = w.dim(1), m = x.numel() / k;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != n))
    throw ShapeError("linear: bias shape " + shape_string(bias.shape()));
  std::vector<Real> out(m * n);
  Map ym(out.data(), m, n);
  ym.noalias() = MapC(x.values().data(), m, k) * MapC(w.values().data(), k, n);
  if (bias.defined()) ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), n);
  Shape out_shape = x.shape();
  out_shape.back() = n;
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_op("linear", out_shape, std::move(out), inputs,
                 [m, k, n, has_bias](BackwardContext& ctx) {
                   MapC gy(ctx.out_grad().data(), m, n);
                   if (ctx.needs(0)) {
                     Map gx(ctx.grad(0).data(), m, k);
                     gx.noalias() += gy * MapC(ctx.value(1).data(), k, n).transpose();
                   }
                   if (ctx.needs(1)) {
                     Map gw(ctx.grad(1).data(), k, n);
                     gw.noalias() += MapC(ctx.value(0).data(), m, k).transpose() * gy;
                   }
                   if (has_bias && ctx.needs(2)) {
                     Eigen::Map<Eigen::RowVectorXd> gb(ctx.grad(2).data(), n);
                     gb += gy.colwise().sum();
                   }
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t c = x.shape().back();
  if (c < 1 || gamma.numel() != c || beta.numel() != c)
    throw ShapeError("layer_norm: affine parameters must have " + std::to_string(c) + " entries");
  const std::size_t rows = x.numel() / c;
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<Real> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = xv.data() + r * c;
    Real mu = 0.0;
    for (std::size_t i = 0; i < c; ++i) mu += row[i];
    mu /= static_cast<Real>(c);
    Real var = 0.0;
    for (std::size_t i = 0; i < c; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<Real>(c);
    const Real inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t i = 0; i < c; ++i) {
      const Real h = (row[i] - mu) * inv;
      xhat[r * c + i] = h;
      out[r * c + i] = h * gv[i] + bv[i];
    }
  }
  return make_op("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                 [c, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](BackwardContext& ctx) {
                   auto go = ctx.out_grad();
                   auto gv = ctx.value(1);
                   if (ctx.needs(0)) {
                     auto gx = ctx.grad(0);
                     const Real inv_c = 1.0 / static_cast<Real>(c);
                     for (std::size_t r = 0; r < rows; ++r) {
                       Real s1 = 0.0, s2 = 0.0;
                       for (std::size_t i = 0; i < c; ++i) {
                         const Real gh = go[r * c + i] * gv[i];
                         s1 += gh;
                         s2 += gh * xhat[r * c + i];
                       }
                       for (std::size_t i = 0; i < c; ++i) {
                         const Real gh = go[r * c + i] * gv[i];
                         gx[r * c + i] +=
                             inv_std[r] * (gh - inv_c * s1 - xhat[r * c + i] * inv_c * s2);
                       }
                     }
                   }
                   if (ctx.needs(1)) {
                     auto gg = ctx.grad(1);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t i = 0; i < c; ++i) gg[i] += go[r * c + i] * xhat[r * c + i];
                   }
                   if (ctx.needs(2)) {
                     auto gb = ctx.grad(2);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t i = 0; i < c; ++i) gb[i] += go[r * c + i];
                   }
                 });
}

Tensor softmax(const Tensor& x, int axis) {
  const int rank = static_cast<int>(x.rank());
  if (rank == 0) throw ShapeError("softmax: scalar input");
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("softmax: axis out of range");
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < rank; ++i) inner *= s[i];
  const std::size_t n = s[axis];
  auto xv = x.values();
  std::vector<Real> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      Real mx = xv[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, xv[base + k * inner]);
      Real z = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const Real e = std::exp(xv[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
    }
  }
  return make_op("softmax", s, std::move(out), {x}, [outer, inner, n](BackwardContext& ctx) {
    auto gx = ctx.grad(0);
    auto go = ctx.out_grad();
    auto y = ctx.out_value();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        Real dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += go[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < n; ++k)
          gx[base + k * inner] += y[base + k * inner] * (go[base + k * inner] - dot);
      }
    }
  });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel) {
  const Image im = as_image("depthwise_conv2d", x);
  if (kernel.rank() != 3 || kernel.dim(0) != kernel.dim(1) || kernel.dim(2) != im.c)
    throw ShapeError("depthwise_conv2d: kernel must be [k,k," + std::to_string(im.c) + "], got " +
                     shape_string(kernel.shape()));
  const std::size_t k = kernel.dim(0);
  if (k % 2 == 0) throw ShapeError("depthwise_conv2d: kernel size must be odd");
  const long r = static_cast<long>(k / 2);
  const long H = static_cast<long>(im.h), W = static_cast<long>(im.w);
  const std::size_t C = im.c;
  auto xv = x.values();
  auto kv = kernel.values();
  std::vector<Real> out(x.numel(), 0.0);
  for (std::size_t b = 0; b < im.b; ++b) {
    const std::size_t boff = b * im.h * im.w * C;
    for (long i = 0; i < H; ++i)
      for (long j = 0; j < W; ++j) {
        Real* y = out.data() + boff + (i * W + j) * C;
        for (long dy = 0; dy < static_cast<long>(k); ++dy) {
          const long si = i + dy - r;
          if (si < 0 || si >= H) continue;
          for (long dx = 0; dx < static_cast<long>(k); ++dx) {
            const long sj = j + dx - r;
            if (sj < 0 || sj >= W) continue;
            const Real* src = xv.data() + boff + (si * W + sj) * C;
            const Real* kk = kv.data() + (dy * k + dx) * C;
            for (std::size_t c = 0; c < C; ++c) y[c] += src[c] * kk[c];
          }
        }
      }
  }
  return make_op("depthwise_conv2d", x.shape(), std::move(out), {x, kernel},
                 [im, k, r](BackwardContext& ctx) {
                   const long H = static_cast<long>(im.h), W = static_cast<long>(im.w);
                   const std::size_t C = im.c;
                   auto go = ctx.out_grad();
                   auto xv = ctx.value(0);
                   auto kv = ctx.value(1);
                   const bool need_x = ctx.needs(0), need_k = ctx.needs(1);
                   std::span<Real> gx = need_x ? ctx.grad(0) : std::span<Real>{};
                   std::span<Real> gk = need_k ? ctx.grad(1) : std::span<Real>{};
                   for (std::size_t b = 0; b < im.b; ++b) {
                     const std::size_t boff = b * im.h * im.w * C;
                     for (long i = 0; i < H; ++i)
                       for (long j = 0; j < W; ++j) {
                         const Real* gy = go.data() + boff + (i * W + j) * C;
                         for (long dy = 0; dy < static_cast<long>(k); ++dy) {
                           const long si = i + dy - r;
                           if (si < 0 || si >= H) continue;
                           for (long dx = 0; dx < static_cast<long>(k); ++dx) {
                             const long sj = j + dx - r;
                             if (sj < 0 || sj >= W) continue;
                             const std::size_t src = boff + (si * W + sj) * C;
                             const std::size_t kof = (dy * k + dx) * C;
                             for (std::size_t c = 0; c < C; ++c) {
                               if (need_x) gx[src + c] += gy[c] * kv[kof + c];
                               if (need_k) gk[kof + c] += gy[c] * xv[src + c];
                             }
                           }
                         }
                       }
                   }
                 });
}

Tensor gather_tokens(const Tensor& x, const std::vector<std::size_t>& index, Shape out_prefix) {
  if (x.rank() == 0) throw ShapeError("gather_tokens: scalar input");
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  if (numel(out_prefix) != index.size())
    throw ShapeError("gather_tokens: prefix " + shape_string(out_prefix) + " does not match " +
                     std::to_string(index.size()) + " indices");
  auto xv = x.values();
  std::vector<Real> out(index.size() * c);
  for (std::size_t t = 0; t < index.size(); ++t) {
    if (index[t] >= rows) throw ShapeError("gather_tokens: index out of range");
    std::copy_n(xv.data() + index[t] * c, c, out.data() + t * c);
  }
  out_prefix.push_back(c);
  return make_op("gather_tokens", std::move(out_prefix), std::move(out), {x},
                 [index, c](BackwardContext& ctx) {
                   auto g = ctx.grad(0);
                   auto go = ctx.out_grad();
                   for (std::size_t t = 0; t < index.size(); ++t) {
                     Real* dst = g.data() + index[t] * c;
                     const Real* src = go.data() + t * c;
                     for (std::size_t i = 0; i < c; ++i) dst[i] += src[i];
                   }
                 });
}

Tensor space_to_depth(const Tensor& x, std::size_t s) {
  const Image im = as_image("space_to_depth", x);
  if (s == 0 || im.h % s != 0 || im.w % s != 0)
    throw ShapeError("space_to_depth: " + std::to_string(im.h) + "x" + std::to_string(im.w) +
                     " not divisible by " + std::to_string(s));
  const std::size_t ho = im.h / s, wo = im.w / s;
  std::vector<std::size_t> index;
  index.reserve(im.b * im.h * im.w);
  for (std::size_t b = 0; b < im.b; ++b)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j)
        for (std::size_t dy = 0; dy < s; ++dy)
          for (std::size_t dx = 0; dx < s; ++dx)
            index.push_back((b * im.h + i * s + dy) * im.w + j * s + dx);
  Tensor g = gather_tokens(x, index, {im.b * ho * wo * s * s});
  return reshape(g, image_shape(x, im.b, ho, wo, s * s * im.c));
}

Tensor conv2d_embed(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride) {
  const Image im = as_image("conv2d_embed", x);
  if (stride == 0 || im.h % stride != 0 || im.w % stride != 0)
    throw ShapeError("conv2d_embed: spatial extent " + std::to_string(im.h) + "x" +
                     std::to_string(im.w) + " not divisible by stride " + std::to_string(stride));
  if (stride == 1) return linear(x, weight, bias);
  return linear(space_to_depth(x, stride), weight, bias);
}

Tensor downsample2x_merge(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return linear(space_to_depth(x, 2), weight, bias);
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  const Image im = as_image("upsample_nearest", x);
  if (factor == 0) throw ShapeError("upsample_nearest: zero factor");
  const std::size_t ho = im.h * factor, wo = im.w * factor;
  std::vector<std::size_t> index;
  index.reserve(im.b * ho * wo);
  for (std::size_t b = 0; b < im.b; ++b)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j)
        index.push_back((b * im.h + i / factor) * im.w + j / factor);
  Tensor g = gather_tokens(x, index, {im.b * ho * wo});
  return reshape(g, image_shape(x, im.b, ho, wo, im.c));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range");
  std::size_t outer = 1, inner = 1, total = 0;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != ref[i])
        throw ShapeError("concat: extent mismatch " + shape_string(s) + " vs " + shape_string(ref));
    widths.push_back(s[axis] * inner);
    total += s[axis];
  }
  const std::size_t row = total * inner;
  std::vector<Real> out(outer * row);
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data() + o * widths[p], widths[p], out.data() + o * row + off);
    off += widths[p];
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  return make_op("concat", out_shape, std::move(out), parts,
                 [widths, outer, row](BackwardContext& ctx) {
                   auto go = ctx.out_grad();
                   std::size_t off = 0;
                   for (std::size_t p = 0; p < widths.size(); ++p) {
                     if (ctx.needs(p)) {
                       auto g = ctx.grad(p);
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t i = 0; i < widths[p]; ++i)
                           g[o * widths[p] + i] += go[o * row + off + i];
                     }
                     off += widths[p];
                   }
                 });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin > end || end > s[axis])
    throw ShapeError("slice: invalid range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + shape_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t src_row = s[axis] * inner, dst_row = (end - begin) * inner,
                    off = begin * inner;
  auto xv = x.values();
  std::vector<Real> out(outer * dst_row);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data() + o * src_row + off, dst_row, out.data() + o * dst_row);
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  return make_op("slice", out_shape, std::move(out), {x},
                 [outer, src_row, dst_row, off](BackwardContext& ctx) {
                   auto g = ctx.grad(0);
                   auto go = ctx.out_grad();
                   for (std::size_t o = 0; o < outer; ++o)
                     for (std::size_t i = 0; i < dst_row; ++i)
                       g[o * src_row + off + i] += go[o * dst_row + i];
                 });
}

Tensor reshape(const Tensor& x, Shape shape) { return make_view("reshape", std::move(shape), x); }

}  // namespace fds
