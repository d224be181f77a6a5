#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fds {

using Real = double;
using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

class BackwardContext;

/// Dense row-major tensor handle with an optional gradient slot.
///
/// Handles are cheap to copy and share the underlying node. Values of a
/// non-leaf tensor never change after creation; leaves may be updated in
/// place by optimizers between graph constructions.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const Real> values() const;
  /// Mutable access for leaves only (parameter updates, test perturbation).
  std::span<Real> mutable_values();
  Real item() const;
  Real at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const Real> grad() const;
  void zero_grad();

  /// Reverse-mode accumulation from this tensor. A scalar is seeded with 1;
  /// otherwise `seed` must match numel().
  void backward(std::span<const Real> seed = {});

  /// Leaf aliasing this tensor's value buffer with a fresh gradient slot.
  Tensor alias_leaf(bool requires_grad) const;
  /// Deep copy as a new leaf.
  Tensor detach() const;

  const std::string& op_name() const;

 private:
  friend class BackwardContext;
  friend Tensor make_op(std::string_view, Shape, std::vector<Real>, std::vector<Tensor>,
                        std::function<void(BackwardContext&)>);
  friend Tensor make_view(std::string_view, Shape, const Tensor&);
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Handed to an op's backward closure. Gradient buffers of inputs are
/// allocated lazily and accumulate across uses.
class BackwardContext {
 public:
  explicit BackwardContext(detail::Node& node) : node_(node) {}
  std::span<const Real> out_grad() const;
  std::span<const Real> out_value() const;
  bool needs(std::size_t input) const;
  std::span<Real> grad(std::size_t input);
  std::span<const Real> value(std::size_t input) const;
  const Shape& shape(std::size_t input) const;

 private:
  detail::Node& node_;
};

/// Creates a result node. Inputs are only recorded when gradient mode is on
/// and at least one input requires a gradient. Throws NumericError if any
/// value is non-finite.
Tensor make_op(std::string_view name, Shape shape, std::vector<Real> values,
               std::vector<Tensor> inputs, std::function<void(BackwardContext&)> backward);

/// Shape-only view (reshape) sharing the value buffer.
Tensor make_view(std::string_view name, Shape shape, const Tensor& input);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace fds
