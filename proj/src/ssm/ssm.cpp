#include "ssm/ssm.hpp"

#include <unsupported/Eigen/MatrixFunctions>
#include <cmath>
#include <string>

#include "common/errors.hpp"
#include "common/parallel.hpp"

namespace fds::ssm {

namespace {

void require_positive_delta(double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta))
    throw DataError("step size delta must be positive and finite, got " + std::to_string(delta));
}

}  // namespace

double zoh_input_factor(double delta, double a) {
  const double z = delta * a;
  if (std::abs(z) < kZohSeriesThreshold) return delta * (1.0 + 0.5 * z);
  return std::expm1(z) / a;
}

DiscreteSsm discretize_zoh(const ContinuousSsm& m, double delta) {
  require_positive_delta(delta);
  const auto n = static_cast<Eigen::Index>(m.state_dim());
  if (m.C.size() != n) throw ShapeError("C must have N = " + std::to_string(n) + " entries");
  DiscreteSsm d;
  d.C = m.C;
  d.delta = delta;

  if (m.diagonal) {
    if (m.A.rows() != n || m.A.cols() != 1)
      throw ShapeError("diagonal A must be stored as an N x 1 column");
    d.A_bar = Eigen::MatrixXd::Zero(n, n);
    d.B_bar.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double a = m.A(i, 0);
      d.A_bar(i, i) = std::exp(delta * a);
      d.B_bar(i) = zoh_input_factor(delta, a) * m.B(i);
    }
    return d;
  }

  if (m.A.rows() != n || m.A.cols() != n) throw ShapeError("A must be N x N");
  const Eigen::MatrixXd dA = delta * m.A;
  d.A_bar = dA.exp();
  const Eigen::VectorXd dB = delta * m.B;
  if (dA.cwiseAbs().maxCoeff() < kZohSeriesThreshold) {
    // (dA)^-1 (exp(dA) - I) = I + dA/2 + O(dA^2)
    d.B_bar = dB + 0.5 * (dA * dB);
    return d;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(dA);
  if (!lu.isInvertible())
    throw DataError("delta*A is singular; zero-order hold needs an invertible state matrix");
  d.B_bar = lu.solve((d.A_bar - Eigen::MatrixXd::Identity(n, n)) * dB);
  return d;
}

std::vector<double> scan_recurrent(const DiscreteSsm& m, std::span<const double> x) {
  std::vector<double> y(x.size());
  Eigen::VectorXd h = Eigen::VectorXd::Zero(m.B_bar.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    h = m.A_bar * h + m.B_bar * x[k];
    y[k] = m.C.dot(h);
  }
  return y;
}

std::vector<double> kernel_conv(const DiscreteSsm& m, std::size_t length) {
  std::vector<double> kernel(length);
  Eigen::VectorXd v = m.B_bar;
  for (std::size_t j = 0; j < length; ++j) {
    kernel[j] = m.C.dot(v);
    v = m.A_bar * v;
  }
  return kernel;
}

std::vector<double> apply_kernel(std::span<const double> x, std::span<const double> kernel) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t k = 0; k < x.size(); ++k) {
    const std::size_t taps = std::min(k + 1, kernel.size());
    double acc = 0.0;
    for (std::size_t j = 0; j < taps; ++j) acc += kernel[j] * x[k - j];
    y[k] = acc;
  }
  return y;
}

Tensor apply_kernel(const Tensor& x, const Tensor& kernel) {
  if (x.rank() != 1 || kernel.rank() != 1 || x.dim(0) != kernel.dim(0))
    throw ShapeError("apply_kernel expects 1-D x and kernel of equal length, got " +
                     shape_string(x.shape()) + " and " + shape_string(kernel.shape()));
  const std::size_t n = x.dim(0);
  return make_op("apply_kernel", {n}, apply_kernel(x.values(), kernel.values()), {x, kernel},
                 [n](BackwardContext& ctx) {
                   auto g = ctx.out_grad();
                   auto xv = ctx.value(0);
                   auto kv = ctx.value(1);
                   if (ctx.needs(0)) {
                     auto gx = ctx.grad(0);
                     for (std::size_t k = 0; k < n; ++k)
                       for (std::size_t j = 0; j <= k; ++j) gx[k - j] += g[k] * kv[j];
                   }
                   if (ctx.needs(1)) {
                     auto gk = ctx.grad(1);
                     for (std::size_t k = 0; k < n; ++k)
                       for (std::size_t j = 0; j <= k; ++j) gk[j] += g[k] * xv[k - j];
                   }
                 });
}

void SelectiveScanInputs::validate() const {
  const std::size_t k = length(), n = state_dim();
  if (delta.size() != k || B.size() != k * n || C.size() != k * n)
    throw ShapeError("selective scan inputs: expected delta[K], B[K*N], C[K*N] with K = " +
                     std::to_string(k) + ", N = " + std::to_string(n));
  for (double d : delta) require_positive_delta(d);
}

std::vector<double> selective_scan_sequential(const SelectiveScanInputs& s) {
  s.validate();
  const std::size_t k = s.length(), n = s.state_dim();
  std::vector<double> h(n, 0.0), y(k, 0.0);
  for (std::size_t t = 0; t < k; ++t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double ab = std::exp(s.delta[t] * s.a[i]);
      const double bb = zoh_input_factor(s.delta[t], s.a[i]) * s.B[t * n + i];
      h[i] = ab * h[i] + bb * s.x[t];
      acc += s.C[t * n + i] * h[i];
    }
    y[t] = acc;
  }
  return y;
}

void inclusive_scan(std::span<AffineMap> maps, unsigned threads) {
  const std::size_t n = maps.size();
  if (n <= 1) return;
  std::size_t size = 1;
  while (size < n) size <<= 1;
  std::vector<AffineMap> tree(size);  // padded with the identity
  std::copy(maps.begin(), maps.end(), tree.begin());

  // Up-sweep: each right node absorbs its left sibling subtree.
  for (std::size_t stride = 1; stride < size; stride <<= 1) {
    const std::size_t step = stride * 2, pairs = size / step;
    parallel_for(pairs, threads, [&](std::size_t p) {
      const std::size_t right = p * step + step - 1;
      tree[right] = compose(tree[right], tree[right - stride]);
    });
  }
  // Down-sweep to exclusive prefixes.
  tree[size - 1] = AffineMap{};
  for (std::size_t stride = size / 2; stride >= 1; stride >>= 1) {
    const std::size_t step = stride * 2, pairs = size / step;
    parallel_for(pairs, threads, [&](std::size_t p) {
      const std::size_t right = p * step + step - 1, left = right - stride;
      const AffineMap left_sum = tree[left];
      tree[left] = tree[right];
      tree[right] = compose(left_sum, tree[right]);
    });
  }
  for (std::size_t i = 0; i < n; ++i) maps[i] = compose(maps[i], tree[i]);
}

std::vector<double> selective_scan_parallel(const SelectiveScanInputs& s, unsigned threads) {
  s.validate();
  const std::size_t k = s.length(), n = s.state_dim();
  std::vector<double> y(k, 0.0);
  std::vector<AffineMap> lane(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < k; ++t)
      lane[t] = {std::exp(s.delta[t] * s.a[i]),
                 zoh_input_factor(s.delta[t], s.a[i]) * s.B[t * n + i] * s.x[t]};
    inclusive_scan(lane, threads);
    for (std::size_t t = 0; t < k; ++t) y[t] += s.C[t * n + i] * lane[t].b;
  }
  return y;
}

}  // namespace fds::ssm
