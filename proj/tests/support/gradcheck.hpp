#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "common/rng.hpp"
#include "nn/layers.hpp"
#include "tensor/ops.hpp"
#include "tensor/params.hpp"
#include "tensor/tensor.hpp"

namespace fds::test {

/// Central differences at eps = 1e-5 carry ~1e-10 absolute noise on O(1)
/// losses, so gradients below the floor are compared absolutely at floor * tol.
inline constexpr double kRelFloor = 1e-5;

inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelFloor});
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::vector<Real> v(numel(shape));
  for (auto& x : v) x = uniform(rng, lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Largest elementwise relative error between the analytic gradient of
/// sum(w * f(inputs)) (w fixed random) and central differences, over every
/// input that requires a gradient.
inline double max_grad_error(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                             std::vector<Tensor> inputs, std::uint64_t seed, double eps = 1e-5) {
  Rng rng(seed);
  Tensor probe = f(inputs);
  std::vector<Real> w(probe.numel());
  for (auto& x : w) x = uniform(rng, 0.5, 1.5);
  auto loss = [&](const std::vector<Tensor>& in) {
    NoGradGuard guard;
    const Tensor out = f(in);
    double s = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += w[i] * out.at(i);
    return s;
  };
  for (auto& t : inputs) t.zero_grad();
  Tensor out = f(inputs);
  out.backward(w);
  double worst = 0.0;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<Real> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto vals = t.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const Real keep = vals[i];
      vals[i] = keep + eps;
      const double up = loss(inputs);
      vals[i] = keep - eps;
      const double down = loss(inputs);
      vals[i] = keep;
      worst = std::max(worst, rel_err(analytic[i], (up - down) / (2 * eps)));
    }
  }
  return worst;
}

/// Same check for a module: the gradient w.r.t. its input `x` and w.r.t.
/// every value of `ps` (perturbed in place, restored afterwards).
inline double module_grad_error(ParameterSet& ps, const Tensor& x,
                                const std::function<Tensor(const ParamBinding&, const Tensor&)>& fwd,
                                std::uint64_t seed, double eps = 1e-5) {
  auto through_input = [&](const std::vector<Tensor>& in) {
    ParamBinding bind(ps, false);
    return fwd(bind, in[0]);
  };
  double worst = x.requires_grad() ? max_grad_error(through_input, {x}, seed, eps) : 0.0;

  const Tensor input = x.detach();
  Rng rng(seed + 1);
  ParamBinding bind(ps, true);
  Tensor out = fwd(bind, input);
  std::vector<Real> w(out.numel());
  for (auto& v : w) v = uniform(rng, 0.5, 1.5);
  out.backward(w);
  auto loss = [&] {
    NoGradGuard guard;
    ParamBinding frozen(ps, false);
    const Tensor y = fwd(frozen, input);
    double s = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += w[i] * y.at(i);
    return s;
  };
  for (auto id : ps.ids()) {
    const auto analytic = bind.grad(id);
    auto vals = ps.mutable_values(id);
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const Real keep = vals[i];
      vals[i] = keep + eps;
      const double up = loss();
      vals[i] = keep - eps;
      const double down = loss();
      vals[i] = keep;
      worst = std::max(worst, rel_err(analytic[i], (up - down) / (2 * eps)));
    }
  }
  return worst;
}

// Initial step sizes (1e-3..1e-1) and small projections leave the state path
// nearly inert; O(1) steps and projections make its gradients checkable.
inline void widen_steps(ParameterSet& ps, Rng& rng) {
  for (auto id : ps.ids()) {
    if (ps.name(id).ends_with("dt_proj.bias"))
      for (auto& b : ps.mutable_values(id)) b = nn::inverse_softplus(uniform(rng, 0.3, 1.2));
    if (ps.name(id).ends_with("x_proj"))
      for (auto& w : ps.mutable_values(id)) w = uniform(rng, -1.5, 1.5);
  }
}

/// Spot check for models too large to difference exhaustively: `samples`
/// (parameter, element) pairs drawn uniformly over all parameter values.
/// `loss` must return a scalar.
inline double sampled_grad_error(ParameterSet& ps, const std::function<Tensor(const ParamBinding&)>& loss,
                                 std::size_t samples, std::uint64_t seed, double eps = 1e-5) {
  ParamBinding bind(ps, true);
  loss(bind).backward();
  auto value = [&] {
    NoGradGuard guard;
    ParamBinding frozen(ps, false);
    return loss(frozen).item();
  };
  const auto ids = ps.ids();
  std::vector<std::size_t> offsets{0};
  for (auto id : ids) offsets.push_back(offsets.back() + ps.values(id).size());
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    const auto flat = static_cast<std::size_t>(uniform_index(rng, offsets.back()));
    const auto j = static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin()) - 1;
    const std::size_t i = flat - offsets[j];
    const auto analytic = bind.grad(ids[j])[i];
    auto vals = ps.mutable_values(ids[j]);
    const Real keep = vals[i];
    vals[i] = keep + eps;
    const double up = value();
    vals[i] = keep - eps;
    const double down = value();
    vals[i] = keep;
    worst = std::max(worst, rel_err(analytic, (up - down) / (2 * eps)));
  }
  return worst;
}

}  // namespace fds::test
