#pragma once

#include <string>

#include "common/rng.hpp"
#include "tensor/ops.hpp"
#include "tensor/params.hpp"

namespace fds::nn {

/// y = x W (+ b), W: [in, out].
struct Linear {
  ParamId weight;
  ParamId bias;  // invalid when built without bias
  std::size_t in = 0, out = 0;

  static Linear create(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out,
                       Rng& rng, bool with_bias = true);
  Tensor operator()(const ParamBinding& p, const Tensor& x) const;
};

struct LayerNorm {
  ParamId gamma, beta;

  static LayerNorm create(ParameterSet& ps, const std::string& name, std::size_t dim);
  Tensor operator()(const ParamBinding& p, const Tensor& x) const;
};

/// Inverse of softplus for positive y.
double inverse_softplus(double y);

}  // namespace fds::nn
