#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mmfuse {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Receives the gradient of the node's output and accumulates into parents.
using BackwardFn = std::function<void(std::span<const double> grad_out)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool leaf = true;
  bool released = false;
  std::uint64_t seq = 0;
  std::string_view op = "leaf";
  std::vector<NodePtr> parents;
  BackwardFn backward;

  void accumulate(std::size_t i, double g);
  std::span<double> grad_buffer();
};

std::uint64_t next_seq();

// Flips the sign of the gradient flowing out of every node whose op name
// equals `op`. Used to self-test the gradient checker; empty disables it.
void set_backward_fault(std::string op);
const std::string& backward_fault();

}  // namespace detail

/// Dense row-major array of doubles taking part in a reverse-mode graph.
///
/// Tensor is a handle: copies share the same storage and graph node, like a
/// parameter reference. Use clone() for an independent leaf copy. Leaves are
/// created by the factory functions; every op in ops.hpp produces a non-leaf
/// that remembers how to push gradients back to its inputs.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;

  std::span<const double> values() const;
  /// Writable view of a leaf's storage. Throws GraphError for op outputs,
  /// whose values are saved by the graph.
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t i) const { return values()[i]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  /// Accumulated gradient; empty span when none has been computed.
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse pass from this scalar. Nodes are visited in exact reverse order
  /// of their creation; if `visited` is given, their op names are appended.
  /// The graph is released afterwards, so a second call throws GraphError.
  void backward(std::vector<std::string>* visited = nullptr) const;

  /// Leaf copy of the values, with no graph history.
  Tensor detach() const;
  Tensor clone() const;

  const detail::NodePtr& node() const { return node_; }
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

 private:
  detail::NodePtr node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

}  // namespace mmfuse
