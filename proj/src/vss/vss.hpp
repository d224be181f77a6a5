#pragma once

#include <array>
#include <string>
#include <vector>

#include "nn/layers.hpp"
#include "ssm/ssm.hpp"

namespace fds::vss {

inline constexpr std::size_t kPaths = 4;

/// Grid index visited at each step of path p over an H x W row-major grid:
/// 0 row-major, 1 row-major reversed, 2 column-major, 3 column-major reversed.
std::vector<std::size_t> scan_path(std::size_t H, std::size_t W, std::size_t p);
std::array<std::vector<std::size_t>, kPaths> scan_paths(std::size_t H, std::size_t W);

/// [B, H, W, C] -> four sequences [B, H*W, C].
std::array<Tensor, kPaths> cross_scan(const Tensor& grid);

/// Inverse-permutes each [B, H*W, C] sequence to grid order and sums: -> [B, H, W, C].
Tensor cross_merge(const std::array<Tensor, kPaths>& seqs, std::size_t H, std::size_t W);

struct VssConfig {
  std::size_t dim = 16;
  std::size_t expand = 2;
  std::size_t state = 8;
  std::size_t dt_rank = 0;  // 0 selects ceil(dim / 16)
  ssm::ScanMode mode = ssm::ScanMode::Sequential;

  std::size_t inner() const { return dim * expand; }
  std::size_t rank() const { return dt_rank ? dt_rank : (dim + 15) / 16; }
};

/// One S6 branch: per-token delta, B, C from the token; diagonal A = -exp(A_log).
struct S6Branch {
  ParamId x_proj;  // [E, r + 2N], no bias
  nn::Linear dt_proj;
  ParamId a_log;   // [E, N]
  ParamId d_skip;  // [E]
  std::size_t rank = 0, state = 0;

  static S6Branch create(ParameterSet& ps, const std::string& name, std::size_t inner,
                         std::size_t rank, std::size_t state, Rng& rng);
  /// seq: [B, L, E] -> [B, L, E]; one scan invocation.
  Tensor operator()(const ParamBinding& p, const Tensor& seq, ssm::ScanMode mode) const;
};

struct SS2D {
  std::array<S6Branch, kPaths> branches;
  ssm::ScanMode mode = ssm::ScanMode::Sequential;

  static SS2D create(ParameterSet& ps, const std::string& name, const VssConfig& cfg, Rng& rng);
  /// [B, H, W, E] -> [B, H, W, E]; four scan invocations.
  Tensor operator()(const ParamBinding& p, const Tensor& x) const;
};

/// out = g + Out( LN(SS2D(SiLU(DWConv(In_x(LN g))))) * SiLU(In_z(LN g)) ).
struct VssBlock {
  VssConfig cfg;
  nn::LayerNorm norm;
  nn::Linear in_x, in_z;
  ParamId conv_kernel, conv_bias;
  SS2D ss2d;
  nn::LayerNorm out_norm;
  nn::Linear out_proj;

  static VssBlock create(ParameterSet& ps, const std::string& name, const VssConfig& cfg, Rng& rng);
  Tensor operator()(const ParamBinding& p, const Tensor& g) const;
};

}  // namespace fds::vss
