#pragma once

#include <cstddef>
#include <span>

#include "mmfuse/random.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

enum class Activation { tanh, relu };

/// Variance floor applied before the square root of the weighted variance.
inline constexpr double kVarianceFloor = 1e-8;

/// Frame-attention parameters of attentive statistics pooling:
/// e_t = vᵀ act(W h_t + b) + k.
struct AspParams {
  Tensor W;  // hidden × input
  Tensor b;  // hidden
  Tensor v;  // hidden
  Tensor k;  // scalar bias
  Activation activation = Activation::tanh;

  static AspParams init(std::size_t input_dim, std::size_t hidden, Activation activation, Rng& rng);

  std::size_t input_dim() const { return W.dim(1); }
  std::size_t hidden() const { return W.dim(0); }
  /// Throws DimensionError when the parameter shapes disagree.
  void validate() const;
};

/// Attention logits e_1..e_T for the frames (T×D) of one chunk.
Tensor asp_scores(const Tensor& frames, const AspParams& params);

/// Chunk embedding [weighted mean ; weighted std], length 2D. The attention
/// weights are the softmax of asp_scores().
Tensor asp_pool(const Tensor& frames, const AspParams& params);

/// Weighted-moment half of asp_pool for externally supplied weights.
Tensor weighted_statistics(const Tensor& frames, const Tensor& weights);

Tensor mean_pool(const Tensor& frames);
/// Column-wise maximum; ties resolve to the earliest frame.
Tensor max_pool(const Tensor& frames);

/// Mean of the chunk embeddings of one utterance.
Tensor utterance_aggregate(std::span<const Tensor> chunks);

}  // namespace mmfuse
