#pragma once

#include <cstddef>
#include <vector>

#include "tensor/tensor.hpp"

// Differentiable operations. Image-like tensors are channels-last:
// [B, H, W, C] (rank-3 [H, W, C] is accepted where noted and treated as B=1).

namespace fds {

// Elementwise binary ops. `b` broadcasts onto `a` numpy-style (right-aligned,
// each extent equal or 1). add/mul also accept the mirrored case.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, Real factor);
Tensor add_scalar(const Tensor& a, Real value);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
/// Throws NumericError on non-positive input.
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sums over axis 0: [B, ...] -> [...].
Tensor sum_leading(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., K] * w[K, N] (+ bias[N]).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});

/// Normalizes over the last axis with eps inside the square root.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = 1e-5);

/// Max-subtracted softmax along `axis` (negative counts from the end).
Tensor softmax(const Tensor& x, int axis = -1);

/// Per-channel 2-D convolution with zero same-padding; kernel is [k, k, C], k odd.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel);

/// Non-overlapping s x s blocks folded into channels:
/// [B, H, W, C] -> [B, H/s, W/s, s*s*C], channel index (dy*s + dx)*C + c.
Tensor space_to_depth(const Tensor& x, std::size_t s);

/// Strided s x s convolution (kernel = stride) as a block projection.
/// weight is [s*s*C_in, C_out].
Tensor conv2d_embed(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride);

/// Concatenates each 2x2 token block and projects it; weight is [4C, 2C].
Tensor downsample2x_merge(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

Tensor upsample_nearest(const Tensor& x, std::size_t factor);
inline Tensor upsample2x(const Tensor& x) { return upsample_nearest(x, 2); }

/// Token gather: views x as rows of its last extent C; output row t is
/// input row index[t]. Result shape is out_prefix + {C}.
Tensor gather_tokens(const Tensor& x, const std::vector<std::size_t>& index, Shape out_prefix);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);

}  // namespace fds
