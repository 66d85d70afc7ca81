#include "mmfuse/fusion.hpp"

#include <string>

#include "mmfuse/error.hpp"
#include "mmfuse/ops.hpp"

namespace mmfuse {

namespace {

void require_vector(const Tensor& x, std::size_t n, std::string_view op, std::string_view what) {
  if (x.rank() != 1 || (n != 0 && x.dim(0) != n)) {
    throw DimensionError(std::string(op) + ": " + std::string(what) + " has shape " +
                         shape_str(x.shape()) + ", expected [" + std::to_string(n) + "]");
  }
}

void require_pair(const Tensor& audio, const Tensor& text, std::string_view op) {
  require_vector(audio, 0, op, "audio");
  require_vector(text, audio.dim(0), op, "text");
}

Tensor linear(const Tensor& weight, const Tensor& bias, const Tensor& x) {
  return add(matmul(weight, x), bias);
}

}  // namespace

ProjectionParams ProjectionParams::init(std::size_t audio_in, std::size_t text_in, std::size_t dim,
                                        Rng& rng) {
  ProjectionParams p;
  p.audio_weight = fan_in_uniform(dim, audio_in, rng);
  p.audio_bias = Tensor::zeros({dim}, true);
  p.text_weight = fan_in_uniform(dim, text_in, rng);
  p.text_bias = Tensor::zeros({dim}, true);
  return p;
}

Projected project(const Tensor& audio, const Tensor& text, const ProjectionParams& params) {
  require_vector(audio, params.audio_weight.dim(1), "project", "audio");
  require_vector(text, params.text_weight.dim(1), "project", "text");
  return {linear(params.audio_weight, params.audio_bias, audio),
          linear(params.text_weight, params.text_bias, text)};
}

AtFusionParams AtFusionParams::init(std::size_t dim, std::size_t hidden, Rng& rng) {
  AtFusionParams p;
  p.W = fan_in_uniform(hidden, dim, rng);
  p.w = uniform_tensor({hidden}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
  return p;
}

AtFusionOutput at_fusion(const Tensor& audio, const Tensor& text, const AtFusionParams& params) {
  require_pair(audio, text, "at_fusion");
  const std::size_t d = audio.dim(0);
  if (params.W.rank() != 2 || params.W.dim(1) != d || params.w.shape() != Shape{params.W.dim(0)}) {
    throw DimensionError("at_fusion: W " + shape_str(params.W.shape()) + " / w " +
                         shape_str(params.w.shape()) + " incompatible with D = " + std::to_string(d));
  }
  // D×2 matrix whose columns are the two modality vectors.
  Tensor stacked = concat({reshape(audio, {d, 1}), reshape(text, {d, 1})}, 1);
  Tensor hidden = tanh(matmul(params.W, stacked));           // hidden × 2
  Tensor weights = softmax(matmul(transpose(hidden), params.w));  // 2
  return {matmul(stacked, weights), weights};
}

Tensor concat_fusion(const Tensor& audio, const Tensor& text) {
  require_vector(audio, 0, "concat_fusion", "audio");
  require_vector(text, 0, "concat_fusion", "text");
  return concat({audio, text});
}

GmuParams GmuParams::init(std::size_t dim, Rng& rng) {
  GmuParams p;
  p.text_weight = fan_in_uniform(dim, dim, rng);
  p.text_bias = Tensor::zeros({dim}, true);
  p.audio_weight = fan_in_uniform(dim, dim, rng);
  p.audio_bias = Tensor::zeros({dim}, true);
  p.gate_weight = fan_in_uniform(dim, 2 * dim, rng);
  p.gate_bias = Tensor::zeros({dim}, true);
  return p;
}

Tensor gmu_fusion(const Tensor& text, const Tensor& audio, const GmuParams& params) {
  require_pair(audio, text, "gmu_fusion");
  const std::size_t d = text.dim(0);
  if (params.text_weight.shape() != Shape{d, d} || params.audio_weight.shape() != Shape{d, d} ||
      params.gate_weight.shape() != Shape{d, 2 * d}) {
    throw DimensionError("gmu_fusion: parameter shapes do not match D = " + std::to_string(d));
  }
  Tensor h_text = tanh(linear(params.text_weight, params.text_bias, text));
  Tensor h_audio = tanh(linear(params.audio_weight, params.audio_bias, audio));
  Tensor gate = sigmoid(linear(params.gate_weight, params.gate_bias, concat({text, audio})));
  return add(mul(gate, h_text), mul(shift(neg(gate), 1.0), h_audio));
}

MfbParams MfbParams::init(std::size_t dim, std::size_t factor, std::size_t blocks, Rng& rng) {
  if (factor == 0 || blocks == 0) throw ConfigError("mfb: factor and block count must be >= 1");
  MfbParams p;
  p.factor = factor;
  for (std::size_t i = 0; i < blocks; ++i) {
    p.U.push_back(fan_in_uniform(dim * factor, dim, rng));
    p.V.push_back(fan_in_uniform(dim * factor, dim, rng));
  }
  return p;
}

namespace {

void validate_mfb(const Tensor& audio, const Tensor& text, const MfbParams& params, std::string_view op) {
  require_pair(audio, text, op);
  if (params.blocks() == 0 || params.U.size() != params.V.size()) {
    throw DimensionError(std::string(op) + ": need matching U/V blocks");
  }
  if (params.factor == 0) throw DimensionError(std::string(op) + ": factor must be >= 1");
  const std::size_t d = audio.dim(0);
  for (std::size_t i = 0; i < params.blocks(); ++i) {
    const Shape expected{d * params.factor, d};
    if (params.U[i].shape() != expected || params.V[i].shape() != expected) {
      throw DimensionError(std::string(op) + ": block " + std::to_string(i) + " has U " +
                           shape_str(params.U[i].shape()) + ", V " + shape_str(params.V[i].shape()) +
                           ", expected " + shape_str(expected));
    }
  }
}

Tensor pool_and_normalize(const Tensor& expanded, std::size_t dim, std::size_t factor) {
  Tensor pooled = sum(reshape(expanded, {dim, factor}), 1);
  return l2_normalize(signed_sqrt(pooled), kFusionNormEps);
}

}  // namespace

Tensor mfb_fusion(const Tensor& audio, const Tensor& text, const MfbParams& params) {
  validate_mfb(audio, text, params, "mfb_fusion");
  Tensor expanded = mul(matmul(params.U[0], audio), matmul(params.V[0], text));
  return pool_and_normalize(expanded, audio.dim(0), params.factor);
}

Tensor mfh_fusion(const Tensor& audio, const Tensor& text, const MfbParams& params) {
  validate_mfb(audio, text, params, "mfh_fusion");
  const std::size_t d = audio.dim(0);
  std::vector<Tensor> outputs;
  Tensor previous;
  for (std::size_t i = 0; i < params.blocks(); ++i) {
    Tensor expanded = mul(matmul(params.U[i], audio), matmul(params.V[i], text));
    if (i > 0) expanded = mul(expanded, previous);
    outputs.push_back(pool_and_normalize(expanded, d, params.factor));
    previous = expanded;
  }
  if (outputs.size() == 1) return outputs.front();
  return concat(outputs);
}

}  // namespace mmfuse
