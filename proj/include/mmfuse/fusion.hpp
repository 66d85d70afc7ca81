#pragma once

#include <cstddef>
#include <vector>

#include "mmfuse/random.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

/// Linear maps taking the pooled audio vector and the text embedding to a
/// shared width D.
struct ProjectionParams {
  Tensor audio_weight;  // D × audio_in
  Tensor audio_bias;    // D
  Tensor text_weight;   // D × text_in
  Tensor text_bias;     // D

  static ProjectionParams init(std::size_t audio_in, std::size_t text_in, std::size_t dim, Rng& rng);
  std::size_t dim() const { return audio_weight.dim(0); }
};

struct Projected {
  Tensor audio;
  Tensor text;
};

Projected project(const Tensor& audio, const Tensor& text, const ProjectionParams& params);

/// Modality attention: scores = w_fᵀ tanh(W_f [p_a p_t]), weights = softmax.
struct AtFusionParams {
  Tensor W;  // hidden × D
  Tensor w;  // hidden

  static AtFusionParams init(std::size_t dim, std::size_t hidden, Rng& rng);
};

struct AtFusionOutput {
  Tensor fused;    // D
  Tensor weights;  // 2: (audio, text)
};

AtFusionOutput at_fusion(const Tensor& audio, const Tensor& text, const AtFusionParams& params);

Tensor concat_fusion(const Tensor& audio, const Tensor& text);

/// Gated multimodal unit. The "visual" branch of the original formulation is
/// the audio modality here.
struct GmuParams {
  Tensor text_weight;   // D × D
  Tensor text_bias;     // D
  Tensor audio_weight;  // D × D
  Tensor audio_bias;    // D
  Tensor gate_weight;   // D × 2D, applied to [text ; audio]
  Tensor gate_bias;     // D

  static GmuParams init(std::size_t dim, Rng& rng);
};

Tensor gmu_fusion(const Tensor& text, const Tensor& audio, const GmuParams& params);

/// Factorised bilinear pooling. Each block holds U, V of shape (D·factor)×D;
/// MFB uses the first block, MFH chains all of them.
struct MfbParams {
  std::vector<Tensor> U;
  std::vector<Tensor> V;
  std::size_t factor = 5;

  static MfbParams init(std::size_t dim, std::size_t factor, std::size_t blocks, Rng& rng);
  std::size_t blocks() const { return U.size(); }
};

inline constexpr double kFusionNormEps = 1e-12;

/// SumPool(U a ⊙ V t, factor) followed by signed sqrt and ℓ2 normalisation.
Tensor mfb_fusion(const Tensor& audio, const Tensor& text, const MfbParams& params);

/// Higher-order stack: block i's expanded product is multiplied by block
/// i-1's before pooling; the normalised block outputs are concatenated.
Tensor mfh_fusion(const Tensor& audio, const Tensor& text, const MfbParams& params);

}  // namespace mmfuse
