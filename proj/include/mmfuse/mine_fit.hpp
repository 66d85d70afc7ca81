#pragma once

#include <cstddef>
#include <cstdint>

#include "mmfuse/mine.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

/// n draws of a 1-dim standard bivariate normal with correlation rho,
/// returned as two n × 1 tensors.
struct GaussianPairs {
  Tensor x;
  Tensor z;
};
GaussianPairs gaussian_pairs(std::size_t n, double rho, std::uint64_t seed);

/// −½ ln(1 − ρ²), the mutual information of a standard bivariate normal.
double gaussian_mi(double rho);

struct MineFitOptions {
  std::size_t hidden = 128;
  std::size_t steps = 2000;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct MineFitResult {
  double value = 0.0;  // DV bound of the trained net over the full sample
  std::size_t steps = 0;
  double seconds = 0.0;
  StatisticsNet net;
};

/// Trains a fresh statistics network on minibatches of (x, z) by Adam on
/// the negated DV bound, then scores the whole sample with shift negatives.
MineFitResult fit_mine(const Tensor& x, const Tensor& z, const MineFitOptions& options = {});

}  // namespace mmfuse
