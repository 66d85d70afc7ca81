#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

enum class UnaryOp { exp, log, sqrt, tanh, relu, sigmoid, square, neg, abs };
enum class BinaryOp { add, sub, mul, div };

std::string_view to_string(UnaryOp op);
std::string_view to_string(BinaryOp op);

// Tolerance below zero that sqrt treats as rounding noise rather than a
// domain violation.
inline constexpr double kSqrtGuard = 1e-12;

/// (m×k)·(k×n) -> m×n. A rank-1 right operand of length k is treated as a
/// column and yields a length-m vector.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor unary(UnaryOp op, const Tensor& x);
Tensor binary(BinaryOp op, const Tensor& a, const Tensor& b);

inline Tensor add(const Tensor& a, const Tensor& b) { return binary(BinaryOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinaryOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinaryOp::mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return binary(BinaryOp::div, a, b); }
inline Tensor exp(const Tensor& x) { return unary(UnaryOp::exp, x); }
inline Tensor log(const Tensor& x) { return unary(UnaryOp::log, x); }
inline Tensor sqrt(const Tensor& x) { return unary(UnaryOp::sqrt, x); }
inline Tensor tanh(const Tensor& x) { return unary(UnaryOp::tanh, x); }
inline Tensor relu(const Tensor& x) { return unary(UnaryOp::relu, x); }
inline Tensor sigmoid(const Tensor& x) { return unary(UnaryOp::sigmoid, x); }
inline Tensor square(const Tensor& x) { return unary(UnaryOp::square, x); }
inline Tensor neg(const Tensor& x) { return unary(UnaryOp::neg, x); }
/// |x| with derivative +1 at exactly zero.
inline Tensor abs(const Tensor& x) { return unary(UnaryOp::abs, x); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

Tensor scale(const Tensor& x, double factor);
Tensor shift(const Tensor& x, double offset);
/// max(x, floor); gradient is zero where the floor is active.
Tensor clamp_min(const Tensor& x, double floor);

/// x + b where b is either a single element (broadcast everywhere) or a
/// vector matching the last dimension of x (broadcast over rows).
Tensor add_broadcast(const Tensor& x, const Tensor& b);

/// Numerically stable softmax along `axis` (negative counts from the end).
Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x, int axis = -1);
/// log(sum(exp(x))) over every element, returned as a 1-element tensor.
Tensor logsumexp(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor max(const Tensor& x);
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x, int axis);
/// Gradient goes to the first maximal element along the axis.
Tensor max(const Tensor& x, int axis);

Tensor concat(std::span<const Tensor> parts, int axis = 0);
Tensor concat(std::initializer_list<Tensor> parts, int axis = 0);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
/// Rows of a rank-2 tensor selected (with repetition allowed) by index.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

/// sign(x)·sqrt(|x|). The backward pass floors |x| at 1e-12.
Tensor signed_sqrt(const Tensor& x);
/// x / max(||x||₂, eps) over all elements.
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

}  // namespace mmfuse
