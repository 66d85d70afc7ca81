#pragma once

#include <cstddef>
#include <vector>

#include "mmfuse/random.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

/// Statistics network T_θ: Linear(2D→H) → ReLU → Linear(H→H) → ReLU →
/// Linear(H→1), scoring concatenated (audio, text) pairs.
struct StatisticsNet {
  Tensor W1, b1;
  Tensor W2, b2;
  Tensor W3, b3;

  static StatisticsNet init(std::size_t input_dim, std::size_t hidden, Rng& rng);

  std::size_t input_dim() const { return W1.dim(1); }
  /// Scores for a B × input_dim batch of pairs; returns a length-B vector.
  Tensor operator()(const Tensor& pairs) const;
  std::vector<Tensor> parameters() const { return {W1, b1, W2, b2, W3, b3}; }
};

enum class NegativeSampling {
  shift,        // text row (i + 1) mod B
  permutation,  // seeded random derangement
};

/// Text row paired with each audio row when forming marginal samples.
/// Never the aligned index. Throws InsufficientBatchError for B < 2.
std::vector<std::size_t> negative_indices(std::size_t batch, NegativeSampling mode, Rng* rng = nullptr);

/// [audio_i ; text_{σ(i)}] for the negative permutation σ; B × 2D.
Tensor negative_pairs(const Tensor& audio, const Tensor& text,
                      NegativeSampling mode = NegativeSampling::shift, Rng* rng = nullptr);

/// Donsker–Varadhan estimate on one batch: mean T over aligned pairs minus
/// log-mean-exp T over negative pairs.
struct MiBatchEstimate {
  Tensor joint_term;
  Tensor marginal_term;
  Tensor value;
};

MiBatchEstimate dv_lower_bound(const Tensor& audio, const Tensor& text, const StatisticsNet& net,
                               NegativeSampling mode = NegativeSampling::shift, Rng* rng = nullptr);

/// Negated bound; minimising it tightens the estimate.
Tensor mi_loss(const MiBatchEstimate& estimate);

}  // namespace mmfuse
