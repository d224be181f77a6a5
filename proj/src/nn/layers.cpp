#include "nn/layers.hpp"

#include <cmath>

namespace fds::nn {

Linear Linear::create(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out,
                      Rng& rng, bool with_bias) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = ps.add_uniform(name + ".weight", {in, out}, in, rng);
  if (with_bias) l.bias = ps.add_uniform(name + ".bias", {out}, in, rng);
  return l;
}

Tensor Linear::operator()(const ParamBinding& p, const Tensor& x) const {
  return linear(x, p[weight], bias.valid() ? p[bias] : Tensor{});
}

LayerNorm LayerNorm::create(ParameterSet& ps, const std::string& name, std::size_t dim) {
  return {ps.add_constant(name + ".gamma", {dim}, 1.0), ps.add_constant(name + ".beta", {dim}, 0.0)};
}

Tensor LayerNorm::operator()(const ParamBinding& p, const Tensor& x) const {
  return layer_norm(x, p[gamma], p[beta]);
}

double inverse_softplus(double y) { return y + std::log(-std::expm1(-y)); }

}  // namespace fds::nn
