#include "mmfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mmfuse/error.hpp"

namespace mmfuse {

using detail::Node;
using detail::NodePtr;

std::string_view to_string(UnaryOp op) {
  switch (op) {
    case UnaryOp::exp: return "exp";
    case UnaryOp::log: return "log";
    case UnaryOp::sqrt: return "sqrt";
    case UnaryOp::tanh: return "tanh";
    case UnaryOp::relu: return "relu";
    case UnaryOp::sigmoid: return "sigmoid";
    case UnaryOp::square: return "square";
    case UnaryOp::neg: return "neg";
    case UnaryOp::abs: return "abs";
  }
  return "?";
}

std::string_view to_string(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return "add";
    case BinaryOp::sub: return "sub";
    case BinaryOp::mul: return "mul";
    case BinaryOp::div: return "div";
  }
  return "?";
}

namespace {

// Splits a shape around `axis` into (outer, extent, inner) so that element
// (o, i, r) lives at (o * extent + i) * inner + r.
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
  std::size_t axis = 0;
};

AxisView axis_view(const Shape& shape, int axis, std::string_view op) {
  const int rank = static_cast<int>(shape.size());
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " invalid for shape " + shape_str(shape));
  }
  AxisView v;
  v.axis = static_cast<std::size_t>(a);
  for (std::size_t i = 0; i < v.axis; ++i) v.outer *= shape[i];
  v.extent = shape[v.axis];
  for (std::size_t i = v.axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

// Creates an op output. `fn(out, grad_out)` is installed as the backward rule
// only when recording is enabled and some input requires a gradient.
template <class F>
Tensor record(std::string_view op, Shape shape, std::vector<double> value,
              std::vector<NodePtr> inputs, F&& fn) {
  for (double v : value) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value (output shape " +
                         shape_str(shape) + ")");
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->leaf = false;
  node->op = op;
  node->seq = detail::next_seq();
  const bool needs_grad =
      NoGradGuard::grad_enabled() &&
      std::any_of(inputs.begin(), inputs.end(), [](const NodePtr& n) { return n->requires_grad; });
  if (needs_grad) {
    node->requires_grad = true;
    node->parents = std::move(inputs);
    Node* self = node.get();
    node->backward = [self, fn = std::forward<F>(fn)](std::span<const double> g) { fn(*self, g); };
  }
  return Tensor(std::move(node));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || (b.rank() != 1 && b.rank() != 2)) {
    throw DimensionError("matmul: expected (m×k)·(k×n) or (m×k)·(k), got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const bool column = b.rank() == 1;
  const std::size_t n = column ? 1 : b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const auto A = a.values();
  const auto B = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  Shape shape = column ? Shape{m} : Shape{m, n};
  NodePtr an = a.node();
  NodePtr bn = b.node();
  return record("matmul", std::move(shape), std::move(out), {an, bn},
                [an, bn, m, k, n](Node&, std::span<const double> g) {
                  const auto& A = an->value;
                  const auto& B = bn->value;
                  if (an->requires_grad) {
                    auto ga = an->grad_buffer();
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
                        ga[i * k + p] += acc;
                      }
                    }
                  }
                  if (bn->requires_grad) {
                    auto gb = bn->grad_buffer();
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t p = 0; p < k; ++p) {
                        const double aip = A[i * k + p];
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                      }
                    }
                  }
                });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: rank-2 input required, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0);
  const std::size_t c = a.dim(1);
  const auto X = a.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = X[i * c + j];
  }
  NodePtr an = a.node();
  return record("transpose", {c, r}, std::move(out), {an},
                [an, r, c](Node&, std::span<const double> g) {
                  auto ga = an->grad_buffer();
                  for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
                  }
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  NodePtr an = a.node();
  return record("reshape", std::move(shape), std::move(out), {an},
                [an](Node&, std::span<const double> g) {
                  auto ga = an->grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                });
}

Tensor unary(UnaryOp op, const Tensor& x) {
  const auto X = x.values();
  std::vector<double> out(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double v = X[i];
    switch (op) {
      case UnaryOp::exp: out[i] = std::exp(v); break;
      case UnaryOp::log:
        if (!(v > 0.0)) {
          throw NumericError("log: domain violation, input " + std::to_string(v) + " is not positive");
        }
        out[i] = std::log(v);
        break;
      case UnaryOp::sqrt:
        if (v < -kSqrtGuard) {
          throw NumericError("sqrt: domain violation, input " + std::to_string(v) + " is negative");
        }
        out[i] = std::sqrt(std::max(v, 0.0));
        break;
      case UnaryOp::tanh: out[i] = std::tanh(v); break;
      case UnaryOp::relu: out[i] = v > 0.0 ? v : 0.0; break;
      case UnaryOp::sigmoid:
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        break;
      case UnaryOp::square: out[i] = v * v; break;
      case UnaryOp::neg: out[i] = -v; break;
      case UnaryOp::abs: out[i] = std::fabs(v); break;
    }
  }
  NodePtr xn = x.node();
  return record(to_string(op), x.shape(), std::move(out), {xn},
                [xn, op](Node& self, std::span<const double> g) {
                  const auto& X = xn->value;
                  const auto& Y = self.value;
                  auto gx = xn->grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    double d = 0.0;
                    switch (op) {
                      case UnaryOp::exp: d = Y[i]; break;
                      case UnaryOp::log: d = 1.0 / X[i]; break;
                      case UnaryOp::sqrt: d = 0.5 / Y[i]; break;
                      case UnaryOp::tanh: d = 1.0 - Y[i] * Y[i]; break;
                      case UnaryOp::relu: d = X[i] > 0.0 ? 1.0 : 0.0; break;
                      case UnaryOp::sigmoid: d = Y[i] * (1.0 - Y[i]); break;
                      case UnaryOp::square: d = 2.0 * X[i]; break;
                      case UnaryOp::neg: d = -1.0; break;
                      case UnaryOp::abs: d = X[i] >= 0.0 ? 1.0 : -1.0; break;
                    }
                    gx[i] += g[i] * d;
                  }
                });
}

Tensor binary(BinaryOp op, const Tensor& a, const Tensor& b) {
  require_same_shape(to_string(op), a, b);
  const auto A = a.values();
  const auto B = b.values();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) {
    switch (op) {
      case BinaryOp::add: out[i] = A[i] + B[i]; break;
      case BinaryOp::sub: out[i] = A[i] - B[i]; break;
      case BinaryOp::mul: out[i] = A[i] * B[i]; break;
      case BinaryOp::div: out[i] = A[i] / B[i]; break;
    }
  }
  NodePtr an = a.node();
  NodePtr bn = b.node();
  return record(to_string(op), a.shape(), std::move(out), {an, bn},
                [an, bn, op](Node&, std::span<const double> g) {
                  const auto& A = an->value;
                  const auto& B = bn->value;
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    switch (op) {
                      case BinaryOp::add:
                        an->accumulate(i, g[i]);
                        bn->accumulate(i, g[i]);
                        break;
                      case BinaryOp::sub:
                        an->accumulate(i, g[i]);
                        bn->accumulate(i, -g[i]);
                        break;
                      case BinaryOp::mul:
                        an->accumulate(i, g[i] * B[i]);
                        bn->accumulate(i, g[i] * A[i]);
                        break;
                      case BinaryOp::div:
                        an->accumulate(i, g[i] / B[i]);
                        bn->accumulate(i, -g[i] * A[i] / (B[i] * B[i]));
                        break;
                    }
                  }
                });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= factor;
  NodePtr xn = x.node();
  return record("scale", x.shape(), std::move(out), {xn},
                [xn, factor](Node&, std::span<const double> g) {
                  auto gx = xn->grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
                });
}

Tensor shift(const Tensor& x, double offset) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v += offset;
  NodePtr xn = x.node();
  return record("shift", x.shape(), std::move(out), {xn}, [xn](Node&, std::span<const double> g) {
    auto gx = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor clamp_min(const Tensor& x, double floor) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = std::max(v, floor);
  NodePtr xn = x.node();
  return record("clamp_min", x.shape(), std::move(out), {xn},
                [xn, floor](Node&, std::span<const double> g) {
                  auto gx = xn->grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    if (xn->value[i] > floor) gx[i] += g[i];
                  }
                });
}

Tensor add_broadcast(const Tensor& x, const Tensor& b) {
  const std::size_t width = b.numel();
  const bool scalar = width == 1;
  if (!scalar && (b.rank() != 1 || x.shape().back() != width)) {
    throw DimensionError("add_broadcast: cannot broadcast " + shape_str(b.shape()) + " onto " +
                         shape_str(x.shape()));
  }
  const auto X = x.values();
  const auto B = b.values();
  std::vector<double> out(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] + B[scalar ? 0 : i % width];
  NodePtr xn = x.node();
  NodePtr bn = b.node();
  return record("add_broadcast", x.shape(), std::move(out), {xn, bn},
                [xn, bn, width, scalar](Node&, std::span<const double> g) {
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    xn->accumulate(i, g[i]);
                    bn->accumulate(scalar ? 0 : i % width, g[i]);
                  }
                });
}

Tensor softmax(const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis, "softmax");
  const auto X = x.values();
  std::vector<double> out(X.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t r = 0; r < v.inner; ++r) {
      auto idx = [&](std::size_t i) { return (o * v.extent + i) * v.inner + r; };
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < v.extent; ++i) m = std::max(m, X[idx(i)]);
      double total = 0.0;
      for (std::size_t i = 0; i < v.extent; ++i) {
        out[idx(i)] = std::exp(X[idx(i)] - m);
        total += out[idx(i)];
      }
      for (std::size_t i = 0; i < v.extent; ++i) out[idx(i)] /= total;
    }
  }
  NodePtr xn = x.node();
  return record("softmax", x.shape(), std::move(out), {xn},
                [xn, v](Node& self, std::span<const double> g) {
                  const auto& Y = self.value;
                  auto gx = xn->grad_buffer();
                  for (std::size_t o = 0; o < v.outer; ++o) {
                    for (std::size_t r = 0; r < v.inner; ++r) {
                      auto idx = [&](std::size_t i) { return (o * v.extent + i) * v.inner + r; };
                      double dot = 0.0;
                      for (std::size_t i = 0; i < v.extent; ++i) dot += g[idx(i)] * Y[idx(i)];
                      for (std::size_t i = 0; i < v.extent; ++i) {
                        gx[idx(i)] += Y[idx(i)] * (g[idx(i)] - dot);
                      }
                    }
                  }
                });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis, "log_softmax");
  const auto X = x.values();
  std::vector<double> out(X.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t r = 0; r < v.inner; ++r) {
      auto idx = [&](std::size_t i) { return (o * v.extent + i) * v.inner + r; };
      std::size_t k = 0;
      for (std::size_t i = 1; i < v.extent; ++i) {
        if (X[idx(i)] > X[idx(k)]) k = i;
      }
      const double m = X[idx(k)];
      double rest = 0.0;
      for (std::size_t i = 0; i < v.extent; ++i) {
        if (i != k) rest += std::exp(X[idx(i)] - m);
      }
      const double log_rest = std::log1p(rest);
      for (std::size_t i = 0; i < v.extent; ++i) out[idx(i)] = (X[idx(i)] - m) - log_rest;
    }
  }
  NodePtr xn = x.node();
  return record("log_softmax", x.shape(), std::move(out), {xn},
                [xn, v](Node& self, std::span<const double> g) {
                  const auto& Y = self.value;
                  auto gx = xn->grad_buffer();
                  for (std::size_t o = 0; o < v.outer; ++o) {
                    for (std::size_t r = 0; r < v.inner; ++r) {
                      auto idx = [&](std::size_t i) { return (o * v.extent + i) * v.inner + r; };
                      double total = 0.0;
                      for (std::size_t i = 0; i < v.extent; ++i) total += g[idx(i)];
                      for (std::size_t i = 0; i < v.extent; ++i) {
                        gx[idx(i)] += g[idx(i)] - std::exp(Y[idx(i)]) * total;
                      }
                    }
                  }
                });
}

Tensor logsumexp(const Tensor& x) {
  const auto X = x.values();
  const auto top = std::max_element(X.begin(), X.end());
  const double m = *top;
  double rest = 0.0;
  for (auto it = X.begin(); it != X.end(); ++it) {
    if (it != top) rest += std::exp(*it - m);
  }
  const double lse = m + std::log1p(rest);
  NodePtr xn = x.node();
  return record("logsumexp", {1}, {lse}, {xn}, [xn, lse](Node&, std::span<const double> g) {
    auto gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * std::exp(xn->value[i] - lse);
  });
}

Tensor sum(const Tensor& x) {
  const auto X = x.values();
  double total = 0.0;
  for (double v : X) total += v;
  NodePtr xn = x.node();
  return record("sum", {1}, {total}, {xn}, [xn](Node&, std::span<const double> g) {
    auto gx = xn->grad_buffer();
    for (double& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  const auto X = x.values();
  double total = 0.0;
  for (double v : X) total += v;
  const double n = static_cast<double>(X.size());
  NodePtr xn = x.node();
  return record("mean", {1}, {total / n}, {xn}, [xn, n](Node&, std::span<const double> g) {
    auto gx = xn->grad_buffer();
    for (double& v : gx) v += g[0] / n;
  });
}

Tensor max(const Tensor& x) {
  const auto X = x.values();
  // max_element returns the first maximal element.
  const std::size_t arg = static_cast<std::size_t>(std::max_element(X.begin(), X.end()) - X.begin());
  NodePtr xn = x.node();
  return record("max", {1}, {X[arg]}, {xn}, [xn, arg](Node&, std::span<const double> g) {
    xn->accumulate(arg, g[0]);
  });
}

namespace {

enum class Reduce { sum, mean, max };

Tensor reduce_axis(Reduce kind, const Tensor& x, int axis) {
  static constexpr std::string_view names[] = {"sum_axis", "mean_axis", "max_axis"};
  const std::string_view op = names[static_cast<int>(kind)];
  const AxisView v = axis_view(x.shape(), axis, op);
  const auto X = x.values();
  std::vector<double> out(v.outer * v.inner, 0.0);
  std::vector<std::size_t> argmax;
  if (kind == Reduce::max) argmax.assign(out.size(), 0);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t r = 0; r < v.inner; ++r) {
      const std::size_t dst = o * v.inner + r;
      if (kind == Reduce::max) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < v.extent; ++i) {
          if (X[(o * v.extent + i) * v.inner + r] > X[(o * v.extent + best) * v.inner + r]) best = i;
        }
        argmax[dst] = best;
        out[dst] = X[(o * v.extent + best) * v.inner + r];
      } else {
        double total = 0.0;
        for (std::size_t i = 0; i < v.extent; ++i) total += X[(o * v.extent + i) * v.inner + r];
        out[dst] = kind == Reduce::mean ? total / static_cast<double>(v.extent) : total;
      }
    }
  }
  NodePtr xn = x.node();
  return record(op, drop_axis(x.shape(), v.axis), std::move(out), {xn},
                [xn, v, kind, argmax = std::move(argmax)](Node&, std::span<const double> g) {
                  auto gx = xn->grad_buffer();
                  const double w = kind == Reduce::mean ? 1.0 / static_cast<double>(v.extent) : 1.0;
                  for (std::size_t o = 0; o < v.outer; ++o) {
                    for (std::size_t r = 0; r < v.inner; ++r) {
                      const std::size_t src = o * v.inner + r;
                      if (kind == Reduce::max) {
                        gx[(o * v.extent + argmax[src]) * v.inner + r] += g[src];
                      } else {
                        for (std::size_t i = 0; i < v.extent; ++i) {
                          gx[(o * v.extent + i) * v.inner + r] += g[src] * w;
                        }
                      }
                    }
                  }
                });
}

}  // namespace

Tensor sum(const Tensor& x, int axis) { return reduce_axis(Reduce::sum, x, axis); }
Tensor mean(const Tensor& x, int axis) { return reduce_axis(Reduce::mean, x, axis); }
Tensor max(const Tensor& x, int axis) { return reduce_axis(Reduce::max, x, axis); }

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no parts given");
  const Shape& first = parts[0].shape();
  const AxisView v0 = axis_view(first, axis, "concat");
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != v0.axis && s[i] != first[i]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_str(first) + " and " +
                           shape_str(s) + " along axis " + std::to_string(v0.axis));
    }
    extents.push_back(s[v0.axis]);
    total += s[v0.axis];
  }
  Shape shape = first;
  shape[v0.axis] = total;
  std::vector<double> out(numel(shape));
  std::vector<NodePtr> nodes;
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto X = parts[p].values();
    const std::size_t block = extents[p] * v0.inner;
    for (std::size_t o = 0; o < v0.outer; ++o) {
      std::copy_n(X.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  out.begin() + static_cast<std::ptrdiff_t>(o * total * v0.inner + offset * v0.inner));
    }
    offset += extents[p];
    nodes.push_back(parts[p].node());
  }
  const std::size_t outer = v0.outer;
  const std::size_t inner = v0.inner;
  return record("concat", std::move(shape), std::move(out), nodes,
                [nodes, extents, total, outer, inner](Node&, std::span<const double> g) {
                  std::size_t offset = 0;
                  for (std::size_t p = 0; p < nodes.size(); ++p) {
                    const std::size_t block = extents[p] * inner;
                    if (nodes[p]->requires_grad) {
                      auto gp = nodes[p]->grad_buffer();
                      for (std::size_t o = 0; o < outer; ++o) {
                        for (std::size_t i = 0; i < block; ++i) {
                          gp[o * block + i] += g[o * total * inner + offset * inner + i];
                        }
                      }
                    }
                    offset += extents[p];
                  }
                });
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  const AxisView v = axis_view(x.shape(), axis, "slice");
  if (begin >= end || end > v.extent) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for extent " + std::to_string(v.extent));
  }
  Shape shape = x.shape();
  shape[v.axis] = end - begin;
  const std::size_t width = (end - begin) * v.inner;
  const auto X = x.values();
  std::vector<double> out(v.outer * width);
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(X.begin() + static_cast<std::ptrdiff_t>((o * v.extent + begin) * v.inner), width,
                out.begin() + static_cast<std::ptrdiff_t>(o * width));
  }
  NodePtr xn = x.node();
  return record("slice", std::move(shape), std::move(out), {xn},
                [xn, v, begin, width](Node&, std::span<const double> g) {
                  auto gx = xn->grad_buffer();
                  for (std::size_t o = 0; o < v.outer; ++o) {
                    for (std::size_t i = 0; i < width; ++i) {
                      gx[(o * v.extent + begin) * v.inner + i] += g[o * width + i];
                    }
                  }
                });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() != 2) throw DimensionError("gather_rows: rank-2 input required, got " + shape_str(x.shape()));
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  const std::size_t n = x.dim(0);
  const std::size_t w = x.dim(1);
  const auto X = x.values();
  std::vector<double> out(rows.size() * w);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) {
      throw DimensionError("gather_rows: index " + std::to_string(rows[r]) + " out of range " +
                           std::to_string(n));
    }
    std::copy_n(X.begin() + static_cast<std::ptrdiff_t>(rows[r] * w), w,
                out.begin() + static_cast<std::ptrdiff_t>(r * w));
  }
  NodePtr xn = x.node();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return record("gather_rows", {rows.size(), w}, std::move(out), {xn},
                [xn, idx = std::move(idx), w](Node&, std::span<const double> g) {
                  auto gx = xn->grad_buffer();
                  for (std::size_t r = 0; r < idx.size(); ++r) {
                    for (std::size_t j = 0; j < w; ++j) gx[idx[r] * w + j] += g[r * w + j];
                  }
                });
}

Tensor signed_sqrt(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = v < 0.0 ? -std::sqrt(-v) : std::sqrt(v);
  NodePtr xn = x.node();
  return record("signed_sqrt", x.shape(), std::move(out), {xn},
                [xn](Node&, std::span<const double> g) {
                  auto gx = xn->grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] += g[i] * 0.5 / std::sqrt(std::max(std::fabs(xn->value[i]), 1e-12));
                  }
                });
}

Tensor l2_normalize(const Tensor& x, double eps) {
  const auto X = x.values();
  double sq = 0.0;
  for (double v : X) sq += v * v;
  const double norm = std::sqrt(sq);
  const double denom = std::max(norm, eps);
  std::vector<double> out(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] / denom;
  NodePtr xn = x.node();
  const bool active = norm > eps;
  return record("l2_normalize", x.shape(), std::move(out), {xn},
                [xn, denom, active](Node& self, std::span<const double> g) {
                  const auto& Y = self.value;
                  auto gx = xn->grad_buffer();
                  double dot = 0.0;
                  if (active) {
                    for (std::size_t i = 0; i < g.size(); ++i) dot += Y[i] * g[i];
                  }
                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += (g[i] - Y[i] * dot) / denom;
                });
}

}  // namespace mmfuse
