#include "mmfuse/mine_fit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "mmfuse/error.hpp"
#include "mmfuse/ops.hpp"
#include "mmfuse/training.hpp"

namespace mmfuse {

GaussianPairs gaussian_pairs(std::size_t n, double rho, std::uint64_t seed) {
  if (!(rho > -1.0 && rho < 1.0)) throw ConfigError("gaussian_pairs: rho must lie in (-1, 1)");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(n), z(n);
  const double residual = std::sqrt(1.0 - rho * rho);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = normal(rng);
    z[i] = rho * x[i] + residual * normal(rng);
  }
  return {Tensor::from({n, 1}, std::move(x)), Tensor::from({n, 1}, std::move(z))};
}

double gaussian_mi(double rho) { return -0.5 * std::log(1.0 - rho * rho); }

MineFitResult fit_mine(const Tensor& x, const Tensor& z, const MineFitOptions& options) {
  if (x.rank() != 2 || x.shape() != z.shape()) {
    throw DimensionError("fit_mine: x and z must be matching n × d, got " + shape_str(x.shape()) + " and " +
                         shape_str(z.shape()));
  }
  const std::size_t n = x.dim(0);
  if (n < 2 || options.batch_size < 2) throw InsufficientBatchError("fit_mine: need at least 2 samples per batch");
  const auto start = std::chrono::steady_clock::now();

  Rng rng(options.seed);
  MineFitResult result;
  result.net = StatisticsNet::init(2 * x.dim(1), options.hidden, rng);
  Adam adam(result.net.parameters());

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::min(options.batch_size, n);
  std::size_t cursor = n;
  std::vector<std::size_t> rows(batch);
  for (std::size_t step = 0; step < options.steps; ++step) {
    if (cursor + batch > n) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    std::copy_n(order.begin() + static_cast<std::ptrdiff_t>(cursor), batch, rows.begin());
    cursor += batch;
    adam.zero_grad();
    mi_loss(dv_lower_bound(gather_rows(x, rows), gather_rows(z, rows), result.net)).backward();
    adam.step(options.lr);
  }
  result.steps = options.steps;

  NoGradGuard no_grad;
  result.value = dv_lower_bound(x, z, result.net).value.item();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace mmfuse
