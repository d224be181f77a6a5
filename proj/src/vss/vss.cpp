#include "vss/vss.hpp"

#include <cmath>

#include "common/errors.hpp"

namespace fds::vss {

std::vector<std::size_t> scan_path(std::size_t H, std::size_t W, std::size_t p) {
  const std::size_t L = H * W;
  std::vector<std::size_t> path(L);
  for (std::size_t i = 0; i < L; ++i) {
    switch (p) {
      case 0: path[i] = i; break;
      case 1: path[i] = L - 1 - i; break;
      case 2: path[i] = (i % H) * W + i / H; break;
      case 3: {
        const std::size_t j = L - 1 - i;
        path[i] = (j % H) * W + j / H;
        break;
      }
      default: throw std::out_of_range("scan path index " + std::to_string(p));
    }
  }
  return path;
}

std::array<std::vector<std::size_t>, kPaths> scan_paths(std::size_t H, std::size_t W) {
  return {scan_path(H, W, 0), scan_path(H, W, 1), scan_path(H, W, 2), scan_path(H, W, 3)};
}

namespace {

std::vector<std::size_t> batched(const std::vector<std::size_t>& perm, std::size_t B) {
  const std::size_t L = perm.size();
  std::vector<std::size_t> idx(B * L);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < L; ++i) idx[b * L + i] = b * L + perm[i];
  return idx;
}

std::vector<std::size_t> inverse(const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

}  // namespace

std::array<Tensor, kPaths> cross_scan(const Tensor& grid) {
  if (grid.rank() != 4) throw ShapeError("cross_scan expects [B, H, W, C], got " + shape_string(grid.shape()));
  const std::size_t B = grid.dim(0), H = grid.dim(1), W = grid.dim(2);
  std::array<Tensor, kPaths> out;
  for (std::size_t p = 0; p < kPaths; ++p)
    out[p] = gather_tokens(grid, batched(scan_path(H, W, p), B), {B, H * W});
  return out;
}

Tensor cross_merge(const std::array<Tensor, kPaths>& seqs, std::size_t H, std::size_t W) {
  const std::size_t B = seqs[0].dim(0);
  Tensor sum_grid;
  for (std::size_t p = 0; p < kPaths; ++p) {
    if (seqs[p].rank() != 3 || seqs[p].dim(1) != H * W || seqs[p].shape() != seqs[0].shape())
      throw ShapeError("cross_merge: sequence " + std::to_string(p) + " has shape " +
                       shape_string(seqs[p].shape()));
    auto g = gather_tokens(seqs[p], batched(inverse(scan_path(H, W, p)), B), {B, H, W});
    sum_grid = p == 0 ? g : add(sum_grid, g);
  }
  return sum_grid;
}

S6Branch S6Branch::create(ParameterSet& ps, const std::string& name, std::size_t inner,
                          std::size_t rank, std::size_t state, Rng& rng) {
  S6Branch s;
  s.rank = rank;
  s.state = state;
  s.x_proj = ps.add_uniform(name + ".x_proj", {inner, rank + 2 * state}, inner, rng);
  s.dt_proj = nn::Linear::create(ps, name + ".dt_proj", rank, inner, rng);
  // Step sizes start log-uniform in [1e-3, 1e-1].
  auto bias = ps.mutable_values(s.dt_proj.bias);
  for (auto& b : bias) {
    const double dt = std::exp(uniform(rng, std::log(1e-3), std::log(1e-1)));
    b = nn::inverse_softplus(dt);
  }
  std::vector<Real> alog(inner * state);
  for (std::size_t e = 0; e < inner; ++e)
    for (std::size_t n = 0; n < state; ++n) alog[e * state + n] = std::log(static_cast<double>(n + 1));
  s.a_log = ps.add(name + ".A_log", {inner, state}, std::move(alog));
  s.d_skip = ps.add_constant(name + ".D", {inner}, 1.0);
  return s;
}

Tensor S6Branch::operator()(const ParamBinding& p, const Tensor& seq, ssm::ScanMode mode) const {
  auto dbc = linear(seq, p[x_proj]);
  auto delta = softplus(dt_proj(p, slice(dbc, 2, 0, rank)));
  auto Bm = slice(dbc, 2, rank, rank + state);
  auto Cm = slice(dbc, 2, rank + state, rank + 2 * state);
  auto A = neg(exp(p[a_log]));
  return ssm::selective_scan(seq, delta, A, Bm, Cm, p[d_skip], mode);
}

SS2D SS2D::create(ParameterSet& ps, const std::string& name, const VssConfig& cfg, Rng& rng) {
  SS2D s;
  s.mode = cfg.mode;
  for (std::size_t k = 0; k < kPaths; ++k)
    s.branches[k] = S6Branch::create(ps, name + ".path" + std::to_string(k), cfg.inner(), cfg.rank(),
                                     cfg.state, rng);
  return s;
}

Tensor SS2D::operator()(const ParamBinding& p, const Tensor& x) const {
  const std::size_t H = x.dim(1), W = x.dim(2);
  auto seqs = cross_scan(x);
  for (std::size_t k = 0; k < kPaths; ++k) seqs[k] = branches[k](p, seqs[k], mode);
  return cross_merge(seqs, H, W);
}

VssBlock VssBlock::create(ParameterSet& ps, const std::string& name, const VssConfig& cfg, Rng& rng) {
  VssBlock b;
  b.cfg = cfg;
  const std::size_t E = cfg.inner();
  b.norm = nn::LayerNorm::create(ps, name + ".norm", cfg.dim);
  b.in_x = nn::Linear::create(ps, name + ".in_x", cfg.dim, E, rng, false);
  b.in_z = nn::Linear::create(ps, name + ".in_z", cfg.dim, E, rng, false);
  b.conv_kernel = ps.add_uniform(name + ".conv.weight", {3, 3, E}, 9, rng);
  b.conv_bias = ps.add_uniform(name + ".conv.bias", {E}, 9, rng);
  b.ss2d = SS2D::create(ps, name + ".ss2d", cfg, rng);
  b.out_norm = nn::LayerNorm::create(ps, name + ".out_norm", E);
  b.out_proj = nn::Linear::create(ps, name + ".out_proj", E, cfg.dim, rng);
  return b;
}

Tensor VssBlock::operator()(const ParamBinding& p, const Tensor& g) const {
  if (g.rank() != 4 || g.dim(3) != cfg.dim)
    throw ShapeError("vss_block expects [B, H, W, " + std::to_string(cfg.dim) + "], got " +
                     shape_string(g.shape()));
  auto t = norm(p, g);
  auto x = silu(add(depthwise_conv2d(in_x(p, t), p[conv_kernel]), p[conv_bias]));
  auto y = out_norm(p, ss2d(p, x));
  auto gated = mul(y, silu(in_z(p, t)));
  return add(g, out_proj(p, gated));
}

}  // namespace fds::vss
