#include "mmfuse/tensor.hpp"

#include <algorithm>
#include <iterator>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "mmfuse/error.hpp"

namespace mmfuse {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace detail {

namespace {
thread_local std::uint64_t g_seq = 0;
thread_local bool g_grad_enabled = true;
std::string g_fault;
}  // namespace

std::uint64_t next_seq() { return ++g_seq; }

void set_backward_fault(std::string op) { g_fault = std::move(op); }
const std::string& backward_fault() { return g_fault; }

void Node::accumulate(std::size_t i, double g) {
  if (!requires_grad) return;
  grad_buffer()[i] += g;
}

std::span<double> Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
  }
}

detail::NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  validate_shape(shape);
  if (numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " +
                         std::to_string(numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->seq = detail::next_seq();
  return node;
}

}  // namespace

Tensor::Tensor() : node_(make_leaf({1}, {0.0}, false)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  validate_shape(shape);
  std::vector<double> values(mmfuse::numel(shape), value);
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in tensor constructor");
  }
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape()));
  }
  return shape()[axis];
}

std::span<const double> Tensor::values() const { return node_->value; }

std::span<double> Tensor::mutable_values() {
  if (!node_->leaf) throw GraphError("cannot write to the values of an op output");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() needs a single element, shape is " + shape_str(shape()));
  }
  return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw DimensionError("at(row, col) needs rank 2, got " + shape_str(shape()));
  return node_->value.at(row * shape()[1] + col);
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_->leaf) throw GraphError("requires_grad can only be set on leaves");
  node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return node_->leaf; }

std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward(std::vector<std::string>* visited) const {
  if (numel() != 1) {
    throw GraphError("backward() needs a scalar root, shape is " + shape_str(shape()));
  }
  if (node_->released) {
    throw GraphError("backward() called twice on the same graph; run a new forward pass first");
  }
  if (!node_->requires_grad) {
    throw GraphError("backward() on a tensor that does not require grad");
  }

  // Collect every interior node reachable from the root.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{node_.get()};
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    if (n->leaf || !seen.insert(n).second) continue;
    if (n->released) {
      throw GraphError("graph reached through node '" + std::string(n->op) +
                       "' was already consumed by an earlier backward()");
    }
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad) stack.push_back(p.get());
    }
  }
  // Creation order is a topological order, so its reverse is too.
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  node_->grad_buffer()[0] += 1.0;
  const std::string& fault = detail::backward_fault();
  for (detail::Node* n : order) {
    if (visited) visited->emplace_back(n->op);
    if (n->grad.empty()) continue;
    if (!fault.empty() && n->op == fault) {
      for (double& g : n->grad) g = -g;
    }
    n->backward(n->grad);
  }
  // Parents are moved out first so no node is freed while still in `order`.
  std::vector<std::shared_ptr<detail::Node>> keep_alive;
  for (detail::Node* n : order) {
    n->backward = nullptr;
    std::move(n->parents.begin(), n->parents.end(), std::back_inserter(keep_alive));
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
    n->released = true;
  }
}

Tensor Tensor::detach() const {
  return Tensor(make_leaf(node_->shape, node_->value, false));
}

Tensor Tensor::clone() const {
  return Tensor(make_leaf(node_->shape, node_->value, node_->requires_grad));
}

NoGradGuard::NoGradGuard() : previous_(detail::g_grad_enabled) {
  detail::g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = previous_; }

bool NoGradGuard::grad_enabled() { return detail::g_grad_enabled; }

}  // namespace mmfuse
