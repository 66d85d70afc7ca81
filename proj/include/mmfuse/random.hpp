#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

using Rng = std::mt19937_64;

/// Leaf tensor with entries drawn from U(-bound, bound).
inline Tensor uniform_tensor(Shape shape, double bound, Rng& rng, bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

/// Weight matrix out×in with the fan-in scaled uniform initialisation.
inline Tensor fan_in_uniform(std::size_t out, std::size_t in, Rng& rng) {
  return uniform_tensor({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

inline Tensor normal_tensor(Shape shape, double stddev, Rng& rng, bool requires_grad = false) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

}  // namespace mmfuse
