#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "tensor/tensor.hpp"

namespace fds::ssm {

/// h'(t) = A h(t) + B x(t),  y(t) = C h(t) + D x(t).
/// With `diagonal` set, A is stored as an N x 1 column of diagonal entries.
struct ContinuousSsm {
  Eigen::MatrixXd A;
  Eigen::VectorXd B;
  Eigen::RowVectorXd C;
  std::optional<double> D;
  bool diagonal = false;

  std::size_t state_dim() const { return static_cast<std::size_t>(B.size()); }
};

/// h_k = A_bar h_{k-1} + B_bar x_k,  y_k = C h_k  (no feed-through).
struct DiscreteSsm {
  Eigen::MatrixXd A_bar;
  Eigen::VectorXd B_bar;
  Eigen::RowVectorXd C;
  double delta = 0.0;
};

/// Below this |delta * a| the input map uses delta*b*(1 + delta*a/2).
inline constexpr double kZohSeriesThreshold = 1e-8;

/// Zero-order hold: A_bar = exp(delta A), B_bar = (delta A)^-1 (exp(delta A) - I) delta B.
/// Throws DataError for delta <= 0 or a singular delta*A outside the series regime.
DiscreteSsm discretize_zoh(const ContinuousSsm& m, double delta);

/// Scalar ZOH input factor (exp(delta a) - 1) / a, with the series fallback.
double zoh_input_factor(double delta, double a);

/// Recurrent form from h_0 = 0.
std::vector<double> scan_recurrent(const DiscreteSsm& m, std::span<const double> x);

/// (C B_bar, C A_bar B_bar, ..., C A_bar^{K-1} B_bar).
std::vector<double> kernel_conv(const DiscreteSsm& m, std::size_t length);

/// Causal convolution y_k = sum_{j<=k} kernel_j x_{k-j}.
std::vector<double> apply_kernel(std::span<const double> x, std::span<const double> kernel);

/// Differentiable causal convolution over 1-D tensors of equal length.
Tensor apply_kernel(const Tensor& x, const Tensor& kernel);

/// Single-channel selective scan with a shared diagonal A.
struct SelectiveScanInputs {
  std::vector<double> a;      // N, diagonal of A
  std::vector<double> delta;  // K, each > 0
  std::vector<double> B;      // K x N row-major
  std::vector<double> C;      // K x N row-major
  std::vector<double> x;      // K

  std::size_t length() const { return x.size(); }
  std::size_t state_dim() const { return a.size(); }
  void validate() const;
};

std::vector<double> selective_scan_sequential(const SelectiveScanInputs& s);
std::vector<double> selective_scan_parallel(const SelectiveScanInputs& s, unsigned threads = 1);

/// The element h -> a*h + b of the scan monoid.
struct AffineMap {
  double a = 1.0;
  double b = 0.0;
};

/// later o earlier: h -> later.a * (earlier.a * h + earlier.b) + later.b.
inline AffineMap compose(const AffineMap& later, const AffineMap& earlier) {
  return {later.a * earlier.a, later.a * earlier.b + later.b};
}

/// In-place inclusive prefix composition (element k becomes f_k o ... o f_0)
/// using a work-efficient up-sweep/down-sweep over a power-of-two tree. The
/// tree shape is fixed by the length, so the result does not depend on
/// `threads`.
void inclusive_scan(std::span<AffineMap> maps, unsigned threads = 1);

enum class ScanMode { Sequential, Parallel };

/// Batched multi-channel selective scan used by the network.
///   x, delta: [B, L, E];  A: [E, N];  Bm, Cm: [B, L, N];  Dskip: [E] or undefined.
///   y[b,l,e] = sum_n Cm[b,l,n] h[b,l,e,n] + Dskip[e] x[b,l,e]
///   h[b,l,e,n] = exp(delta A) h[b,l-1,e,n] + zoh(delta, A) Bm[b,l,n] x[b,l,e]
/// Gradients flow to every input.
Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& A, const Tensor& Bm,
                      const Tensor& Cm, const Tensor& Dskip, ScanMode mode = ScanMode::Sequential);

/// Number of selective_scan() invocations on this thread.
std::size_t scan_invocations();
void reset_scan_invocations();

}  // namespace fds::ssm
