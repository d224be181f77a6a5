// Batched selective scan with a hand-written adjoint.

#include <cmath>
#include <memory>
#include <string>

#include "common/errors.hpp"
#include "ssm/ssm.hpp"

namespace fds::ssm {

namespace {

thread_local std::size_t g_invocations = 0;

struct Dims {
  std::size_t B, L, E, N;
  std::size_t tok(std::size_t b, std::size_t l) const { return b * L + l; }
};

// Per (token, channel, state) discretization, computed once in the forward
// pass and reused by the adjoint: abar = exp(delta a), phi = expm1(delta a) / a.
struct Discretized {
  std::vector<double> abar, phi;
};

Discretized discretize(const Dims& d, const double* dt, const double* A) {
  Discretized z{std::vector<double>(d.B * d.L * d.E * d.N), std::vector<double>(d.B * d.L * d.E * d.N)};
  for (std::size_t te = 0; te < d.B * d.L * d.E; ++te) {
    const std::size_t e = te % d.E;
    const double delta = dt[te];
    for (std::size_t n = 0; n < d.N; ++n) {
      const double a = A[e * d.N + n], zz = delta * a;
      if (std::abs(zz) < kZohSeriesThreshold) {
        z.abar[te * d.N + n] = std::exp(zz);
        z.phi[te * d.N + n] = delta * (1.0 + 0.5 * zz);
      } else {
        const double em = std::expm1(zz);
        z.abar[te * d.N + n] = 1.0 + em;
        z.phi[te * d.N + n] = em / a;
      }
    }
  }
  return z;
}

// d/da of (exp(delta a) - 1) / a, given abar and phi at the same point.
double zoh_factor_da(double delta, double a, double abar, double phi) {
  const double z = delta * a;
  if (std::abs(z) < 1e-3) return delta * delta * (0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0);
  return (z * abar - phi * a) / (a * a);
}

void forward_sequential(const Dims& d, const Discretized& z, const double* x, const double* Bm, double* h) {
  for (std::size_t b = 0; b < d.B; ++b)
    for (std::size_t l = 0; l < d.L; ++l) {
      const std::size_t t = d.tok(b, l);
      for (std::size_t e = 0; e < d.E; ++e) {
        const std::size_t base = (t * d.E + e) * d.N;
        const double xv = x[t * d.E + e];
        double* hc = h + base;
        const double* hp = l > 0 ? hc - d.E * d.N : nullptr;
        for (std::size_t n = 0; n < d.N; ++n) {
          const double u = z.phi[base + n] * Bm[t * d.N + n] * xv;
          hc[n] = (hp ? z.abar[base + n] * hp[n] : 0.0) + u;
        }
      }
    }
}

void forward_parallel(const Dims& d, const Discretized& z, const double* x, const double* Bm, double* h) {
  std::vector<AffineMap> lane(d.L);
  for (std::size_t b = 0; b < d.B; ++b)
    for (std::size_t e = 0; e < d.E; ++e)
      for (std::size_t n = 0; n < d.N; ++n) {
        for (std::size_t l = 0; l < d.L; ++l) {
          const std::size_t t = d.tok(b, l), i = (t * d.E + e) * d.N + n;
          lane[l] = {z.abar[i], z.phi[i] * Bm[t * d.N + n] * x[t * d.E + e]};
        }
        inclusive_scan(lane);
        for (std::size_t l = 0; l < d.L; ++l) h[(d.tok(b, l) * d.E + e) * d.N + n] = lane[l].b;
      }
}

// Adjoint state g[l] = C[l] gy[l] + A_bar[l+1] g[l+1], stored like h.
void adjoint_sequential(const Dims& d, const Discretized& z, const double* Cm, const double* gy, double* g) {
  const std::size_t step = d.E * d.N;
  for (std::size_t b = 0; b < d.B; ++b)
    for (std::size_t l = d.L; l-- > 0;) {
      const std::size_t t = d.tok(b, l);
      const bool last = l + 1 == d.L;
      for (std::size_t e = 0; e < d.E; ++e) {
        const std::size_t base = (t * d.E + e) * d.N;
        double* gc = g + base;
        for (std::size_t n = 0; n < d.N; ++n) {
          const double carry = last ? 0.0 : z.abar[base + step + n] * gc[step + n];
          gc[n] = Cm[t * d.N + n] * gy[t * d.E + e] + carry;
        }
      }
    }
}

void adjoint_parallel(const Dims& d, const Discretized& z, const double* Cm, const double* gy, double* g) {
  std::vector<AffineMap> lane(d.L);
  for (std::size_t b = 0; b < d.B; ++b)
    for (std::size_t e = 0; e < d.E; ++e)
      for (std::size_t n = 0; n < d.N; ++n) {
        for (std::size_t i = 0; i < d.L; ++i) {
          const std::size_t l = d.L - 1 - i, t = d.tok(b, l);
          const double decay = i == 0 ? 0.0 : z.abar[((t + 1) * d.E + e) * d.N + n];
          lane[i] = {decay, Cm[t * d.N + n] * gy[t * d.E + e]};
        }
        inclusive_scan(lane);
        for (std::size_t i = 0; i < d.L; ++i)
          g[(d.tok(b, d.L - 1 - i) * d.E + e) * d.N + n] = lane[i].b;
      }
}

void check_shape(const Tensor& t, const Shape& want, const char* what) {
  if (t.shape() != want)
    throw ShapeError(std::string("selective_scan: ") + what + " must be " + shape_string(want) +
                     ", got " + shape_string(t.shape()));
}

}  // namespace

std::size_t scan_invocations() { return g_invocations; }
void reset_scan_invocations() { g_invocations = 0; }

Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& A, const Tensor& Bm,
                      const Tensor& Cm, const Tensor& Dskip, ScanMode mode) {
  if (x.rank() != 3) throw ShapeError("selective_scan: x must be [B, L, E], got " + shape_string(x.shape()));
  if (A.rank() != 2) throw ShapeError("selective_scan: A must be [E, N], got " + shape_string(A.shape()));
  const Dims d{x.dim(0), x.dim(1), x.dim(2), A.dim(1)};
  check_shape(delta, x.shape(), "delta");
  check_shape(A, {d.E, d.N}, "A");
  check_shape(Bm, {d.B, d.L, d.N}, "B");
  check_shape(Cm, {d.B, d.L, d.N}, "C");
  const bool has_d = Dskip.defined();
  if (has_d) check_shape(Dskip, {d.E}, "D");
  for (double v : delta.values())
    if (!(v > 0.0)) throw DataError("selective_scan: delta must be positive, got " + std::to_string(v));
  ++g_invocations;

  auto h = std::make_shared<std::vector<double>>(d.B * d.L * d.E * d.N);
  const double* xv = x.values().data();
  const double* bv = Bm.values().data();
  const double* cv = Cm.values().data();
  auto z = std::make_shared<Discretized>(discretize(d, delta.values().data(), A.values().data()));
  if (mode == ScanMode::Sequential)
    forward_sequential(d, *z, xv, bv, h->data());
  else
    forward_parallel(d, *z, xv, bv, h->data());

  std::vector<double> y(d.B * d.L * d.E, 0.0);
  for (std::size_t t = 0; t < d.B * d.L; ++t)
    for (std::size_t e = 0; e < d.E; ++e) {
      const double* hc = h->data() + (t * d.E + e) * d.N;
      double acc = has_d ? Dskip.values()[e] * xv[t * d.E + e] : 0.0;
      for (std::size_t n = 0; n < d.N; ++n) acc += cv[t * d.N + n] * hc[n];
      y[t * d.E + e] = acc;
    }

  std::vector<Tensor> inputs{x, delta, A, Bm, Cm};
  if (has_d) inputs.push_back(Dskip);
  return make_op("selective_scan", x.shape(), std::move(y), std::move(inputs),
                 [d, h, z, has_d, mode](BackwardContext& ctx) {
                   const double* gy = ctx.out_grad().data();
                   const double* xv = ctx.value(0).data();
                   const double* dtv = ctx.value(1).data();
                   const double* av = ctx.value(2).data();
                   const double* bv = ctx.value(3).data();
                   const double* cv = ctx.value(4).data();
                   std::vector<double> g(h->size());
                   if (mode == ScanMode::Sequential)
                     adjoint_sequential(d, *z, cv, gy, g.data());
                   else
                     adjoint_parallel(d, *z, cv, gy, g.data());

                   double* gx = ctx.needs(0) ? ctx.grad(0).data() : nullptr;
                   double* gdt = ctx.needs(1) ? ctx.grad(1).data() : nullptr;
                   double* ga = ctx.needs(2) ? ctx.grad(2).data() : nullptr;
                   double* gb = ctx.needs(3) ? ctx.grad(3).data() : nullptr;
                   double* gc = ctx.needs(4) ? ctx.grad(4).data() : nullptr;
                   const double* dv = has_d ? ctx.value(5).data() : nullptr;
                   double* gd = has_d && ctx.needs(5) ? ctx.grad(5).data() : nullptr;

                   for (std::size_t b = 0; b < d.B; ++b)
                     for (std::size_t l = 0; l < d.L; ++l) {
                       const std::size_t t = d.tok(b, l);
                       for (std::size_t e = 0; e < d.E; ++e) {
                         const std::size_t te = t * d.E + e;
                         const double delta = dtv[te], xe = xv[te], gye = gy[te];
                         const double* hc = h->data() + te * d.N;
                         const double* hp = l > 0 ? hc - d.E * d.N : nullptr;
                         const double* gl = g.data() + te * d.N;
                         double gx_acc = dv ? dv[e] * gye : 0.0, gdt_acc = 0.0;
                         for (std::size_t n = 0; n < d.N; ++n) {
                           const double a = av[e * d.N + n];
                           const double abar = z->abar[te * d.N + n];
                           const double phi = z->phi[te * d.N + n];
                           const double bn = bv[t * d.N + n];
                           const double hprev = hp ? hp[n] : 0.0;
                           const double gn = gl[n];
                           gx_acc += gn * phi * bn;
                           gdt_acc += gn * (hprev * a + bn * xe) * abar;
                           if (ga) ga[e * d.N + n] += gn * (hprev * delta * abar + bn * xe * zoh_factor_da(delta, a, abar, phi));
                           if (gb) gb[t * d.N + n] += gn * phi * xe;
                           if (gc) gc[t * d.N + n] += gye * hc[n];
                         }
                         if (gx) gx[te] += gx_acc;
                         if (gdt) gdt[te] += gdt_acc;
                         if (gd) gd[e] += gye * xe;
                       }
                     }
                 });
}

}  // namespace fds::ssm
