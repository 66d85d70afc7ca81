#include "mmfuse/pooling.hpp"

#include <string>

#include "mmfuse/error.hpp"
#include "mmfuse/ops.hpp"

namespace mmfuse {

AspParams AspParams::init(std::size_t input_dim, std::size_t hidden, Activation activation, Rng& rng) {
  AspParams p;
  p.W = fan_in_uniform(hidden, input_dim, rng);
  p.b = Tensor::zeros({hidden}, true);
  p.v = uniform_tensor({hidden}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
  p.k = Tensor::zeros({1}, true);
  p.activation = activation;
  return p;
}

void AspParams::validate() const {
  if (W.rank() != 2) throw DimensionError("asp: W must be a matrix, got " + shape_str(W.shape()));
  const std::size_t h = W.dim(0);
  if (b.shape() != Shape{h} || v.shape() != Shape{h} || k.numel() != 1) {
    throw DimensionError("asp: hidden width " + std::to_string(h) + " disagrees with b " +
                         shape_str(b.shape()) + ", v " + shape_str(v.shape()) + ", k " +
                         shape_str(k.shape()));
  }
}

namespace {

void require_frames(const Tensor& frames, std::string_view op) {
  if (frames.rank() != 2) {
    throw DimensionError(std::string(op) + ": frames must be T×D, got " + shape_str(frames.shape()));
  }
}

}  // namespace

Tensor asp_scores(const Tensor& frames, const AspParams& params) {
  require_frames(frames, "asp_scores");
  params.validate();
  if (frames.dim(1) != params.input_dim()) {
    throw DimensionError("asp_scores: frame dim " + std::to_string(frames.dim(1)) +
                         " does not match W " + shape_str(params.W.shape()));
  }
  Tensor hidden = add_broadcast(matmul(frames, transpose(params.W)), params.b);
  hidden = params.activation == Activation::tanh ? tanh(hidden) : relu(hidden);
  return add_broadcast(matmul(hidden, params.v), params.k);
}

Tensor weighted_statistics(const Tensor& frames, const Tensor& weights) {
  require_frames(frames, "weighted_statistics");
  Tensor frames_t = transpose(frames);
  Tensor mu = matmul(frames_t, weights);
  Tensor second = matmul(transpose(square(frames)), weights);
  Tensor var = clamp_min(sub(second, square(mu)), kVarianceFloor);
  return concat({mu, sqrt(var)});
}

Tensor asp_pool(const Tensor& frames, const AspParams& params) {
  return weighted_statistics(frames, softmax(asp_scores(frames, params)));
}

Tensor mean_pool(const Tensor& frames) {
  require_frames(frames, "mean_pool");
  return mean(frames, 0);
}

Tensor max_pool(const Tensor& frames) {
  require_frames(frames, "max_pool");
  return max(frames, 0);
}

Tensor utterance_aggregate(std::span<const Tensor> chunks) {
  if (chunks.empty()) throw DimensionError("utterance_aggregate: utterance has no audio chunks (N = 0)");
  Tensor total = chunks[0];
  for (std::size_t i = 1; i < chunks.size(); ++i) {
    if (chunks[i].shape() != chunks[0].shape()) {
      throw DimensionError("utterance_aggregate: chunk " + std::to_string(i) + " has shape " +
                           shape_str(chunks[i].shape()) + ", expected " + shape_str(chunks[0].shape()));
    }
    total = add(total, chunks[i]);
  }
  if (chunks.size() == 1) return total;
  return scale(total, 1.0 / static_cast<double>(chunks.size()));
}

}  // namespace mmfuse
