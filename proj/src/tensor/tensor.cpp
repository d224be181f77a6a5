#include "tensor/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "common/errors.hpp"

namespace fds {

namespace detail {

struct Node {
  std::string op = "leaf";
  Shape shape;
  std::shared_ptr<std::vector<Real>> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(BackwardContext&)> backward_fn;

  std::span<Real> ensure_grad() {
    if (grad.empty()) grad.assign(value->size(), 0.0);
    return grad;
  }
};

}  // namespace detail

namespace {
thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> new_leaf(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (numel(shape) != values.size())
    throw ShapeError("tensor: shape " + shape_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::make_shared<std::vector<Real>>(std::move(values));
  node->requires_grad = requires_grad;
  return node;
}
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = fds::numel(shape);
  return Tensor(new_leaf(std::move(shape), std::vector<Real>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  auto n = fds::numel(shape);
  return Tensor(new_leaf(std::move(shape), std::vector<Real>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  return Tensor(new_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return Tensor(new_leaf({}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size())
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " +
                     shape_string(node_->shape));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value->size(); }

std::span<const Real> Tensor::values() const { return *node_->value; }

std::span<Real> Tensor::mutable_values() {
  if (!node_->inputs.empty() || node_->backward_fn)
    throw std::logic_error("tensor: mutable_values() on a non-leaf tensor");
  return *node_->value;
}

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("tensor: item() on " + shape_string(shape()));
  return (*node_->value)[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const Real> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { node_->grad.clear(); }
const std::string& Tensor::op_name() const { return node_->op; }

Tensor Tensor::alias_leaf(bool requires_grad) const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->value = node_->value;
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::detach() const { return Tensor::from(shape(), *node_->value, false); }

void Tensor::backward(std::span<const Real> seed) {
  if (!node_->requires_grad) throw std::logic_error("tensor: backward() on a tensor without grad");
  if (seed.empty() && numel() != 1)
    throw ShapeError("tensor: backward() without seed on non-scalar " + shape_string(shape()));
  if (!seed.empty() && seed.size() != numel())
    throw ShapeError("tensor: backward() seed size mismatch");

  // Reverse topological order via iterative post-order DFS.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  auto g = node_->ensure_grad();
  if (seed.empty()) {
    g[0] += 1.0;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward_fn || node->grad.empty()) continue;
    BackwardContext ctx(*node);
    node->backward_fn(ctx);
  }
}

std::span<const Real> BackwardContext::out_grad() const { return node_.grad; }
std::span<const Real> BackwardContext::out_value() const { return *node_.value; }
bool BackwardContext::needs(std::size_t input) const {
  return node_.inputs[input]->requires_grad;
}
std::span<Real> BackwardContext::grad(std::size_t input) {
  return node_.inputs[input]->ensure_grad();
}
std::span<const Real> BackwardContext::value(std::size_t input) const {
  return *node_.inputs[input]->value;
}
const Shape& BackwardContext::shape(std::size_t input) const {
  return node_.inputs[input]->shape;
}

Tensor make_op(std::string_view name, Shape shape, std::vector<Real> values,
               std::vector<Tensor> inputs, std::function<void(BackwardContext&)> backward) {
  if (numel(shape) != values.size())
    throw ShapeError(std::string(name) + ": produced " + std::to_string(values.size()) +
                     " values for shape " + shape_string(shape));
  for (Real v : values)
    if (!std::isfinite(v)) throw NumericError(std::string(name) + ": non-finite value produced");

  auto node = std::make_shared<detail::Node>();
  node->op = std::string(name);
  node->shape = std::move(shape);
  node->value = std::make_shared<std::vector<Real>>(std::move(values));
  bool any = false;
  if (g_grad_enabled)
    for (const auto& t : inputs) any = any || t.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node_);
    node->backward_fn = std::move(backward);
  }
  return Tensor(node);
}

Tensor make_view(std::string_view name, Shape shape, const Tensor& input) {
  if (numel(shape) != input.numel())
    throw ShapeError(std::string(name) + ": cannot view " + shape_string(input.shape()) + " as " +
                     shape_string(shape));
  auto node = std::make_shared<detail::Node>();
  node->op = std::string(name);
  node->shape = std::move(shape);
  node->value = input.node_->value;
  if (g_grad_enabled && input.requires_grad()) {
    node->requires_grad = true;
    node->inputs.push_back(input.node_);
    node->backward_fn = [](BackwardContext& ctx) {
      auto g = ctx.grad(0);
      auto go = ctx.out_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
    };
  }
  return Tensor(node);
}

}  // namespace fds
