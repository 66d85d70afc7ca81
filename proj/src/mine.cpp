#include "mmfuse/mine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mmfuse/error.hpp"
#include "mmfuse/ops.hpp"

namespace mmfuse {

StatisticsNet StatisticsNet::init(std::size_t input_dim, std::size_t hidden, Rng& rng) {
  StatisticsNet net;
  net.W1 = fan_in_uniform(hidden, input_dim, rng);
  net.b1 = Tensor::zeros({hidden}, true);
  net.W2 = fan_in_uniform(hidden, hidden, rng);
  net.b2 = Tensor::zeros({hidden}, true);
  net.W3 = fan_in_uniform(1, hidden, rng);
  net.b3 = Tensor::zeros({1}, true);
  return net;
}

Tensor StatisticsNet::operator()(const Tensor& pairs) const {
  if (pairs.rank() != 2 || pairs.dim(1) != input_dim()) {
    throw DimensionError("statistics net: expected B×" + std::to_string(input_dim()) + " pairs, got " +
                         shape_str(pairs.shape()));
  }
  Tensor h = relu(add_broadcast(matmul(pairs, transpose(W1)), b1));
  h = relu(add_broadcast(matmul(h, transpose(W2)), b2));
  Tensor out = add_broadcast(matmul(h, transpose(W3)), b3);
  return reshape(out, {pairs.dim(0)});
}

std::vector<std::size_t> negative_indices(std::size_t batch, NegativeSampling mode, Rng* rng) {
  if (batch < 2) {
    throw InsufficientBatchError("negative pairs need a batch of at least 2, got " +
                                 std::to_string(batch));
  }
  std::vector<std::size_t> idx(batch);
  if (mode == NegativeSampling::shift) {
    for (std::size_t i = 0; i < batch; ++i) idx[i] = (i + 1) % batch;
    return idx;
  }
  if (rng == nullptr) throw ConfigError("permutation negative sampling needs a random generator");
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Rejection sampling; the acceptance rate tends to 1/e.
  for (;;) {
    std::shuffle(idx.begin(), idx.end(), *rng);
    bool fixed_point = false;
    for (std::size_t i = 0; i < batch && !fixed_point; ++i) fixed_point = idx[i] == i;
    if (!fixed_point) return idx;
  }
}

namespace {

void require_batch_pair(const Tensor& audio, const Tensor& text) {
  if (audio.rank() != 2 || text.rank() != 2 || audio.dim(0) != text.dim(0)) {
    throw DimensionError("MINE: audio " + shape_str(audio.shape()) + " and text " +
                         shape_str(text.shape()) + " must be B×D batches of equal size");
  }
}

}  // namespace

Tensor negative_pairs(const Tensor& audio, const Tensor& text, NegativeSampling mode, Rng* rng) {
  require_batch_pair(audio, text);
  const auto idx = negative_indices(audio.dim(0), mode, rng);
  return concat({audio, gather_rows(text, idx)}, 1);
}

MiBatchEstimate dv_lower_bound(const Tensor& audio, const Tensor& text, const StatisticsNet& net,
                               NegativeSampling mode, Rng* rng) {
  require_batch_pair(audio, text);
  const std::size_t batch = audio.dim(0);
  Tensor negatives = negative_pairs(audio, text, mode, rng);
  Tensor joint = mean(net(concat({audio, text}, 1)));
  Tensor marginal = shift(logsumexp(net(negatives)), -std::log(static_cast<double>(batch)));
  Tensor value = sub(joint, marginal);
  return {joint, marginal, value};
}

Tensor mi_loss(const MiBatchEstimate& estimate) { return neg(estimate.value); }

}  // namespace mmfuse
