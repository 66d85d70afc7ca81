#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mmfuse/fusion.hpp"
#include "mmfuse/mine.hpp"
#include "mmfuse/pooling.hpp"
#include "mmfuse/record.hpp"

namespace mmfuse {

enum class PoolingKind { asp, mean, max };
enum class FusionKind { at, concat, gmu, mfb, mfh };

std::string to_string(PoolingKind kind);
std::string to_string(FusionKind kind);
PoolingKind parse_pooling(const std::string& name);
FusionKind parse_fusion(const std::string& name);
std::string to_string(Activation activation);
Activation parse_activation(const std::string& name);

/// Architecture of one model. Everything needed to rebuild the parameter
/// layout; its digest ties checkpoints to configurations.
struct ModelConfig {
  std::size_t text_dim = 0;
  std::size_t audio_dim = 0;
  PoolingKind pooling = PoolingKind::asp;
  FusionKind fusion = FusionKind::at;
  std::size_t proj_dim = 256;
  std::size_t asp_hidden = 128;
  Activation asp_activation = Activation::tanh;
  std::size_t fusion_hidden = 128;
  std::size_t mfb_factor = 5;
  std::size_t mfh_blocks = 2;
  std::size_t mine_hidden = 128;

  /// Width of the utterance-level audio vector entering the projection.
  std::size_t pooled_dim() const;
  /// Width of the fused vector entering the classifier head.
  std::size_t head_input_dim() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  std::uint64_t digest() const;
};

/// FNV-1a 64-bit hash, used for configuration digests.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex_digest(std::uint64_t digest);

struct DenseHead {
  Tensor W;  // 2 × input
  Tensor b;  // 2
};

using FusionParams = std::variant<std::monostate, AtFusionParams, GmuParams, MfbParams>;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ModelParams {
  ModelConfig config;
  std::optional<AspParams> asp;  // only for PoolingKind::asp
  ProjectionParams proj;
  FusionParams fusion;           // monostate for concat
  StatisticsNet mine;
  DenseHead head;

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  /// Every learnable tensor with a stable dotted name, in a fixed order.
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  /// Deep copy with fresh leaves.
  ModelParams clone() const;
  /// Overwrites this model's values with `other`'s (same layout).
  void assign(const ModelParams& other);
  void zero_grad();
};

struct ForwardOutput {
  Tensor logits;  // 2
  Tensor audio;   // projected audio embedding, D
  Tensor text;    // projected text embedding, D
};

/// chunks → pooling → chunk average → projection → fusion → dense head.
ForwardOutput forward_utterance(const UtteranceRecord& record, const ModelParams& params);

/// Mean negative log-likelihood of `labels` under softmax(logits) for a B×2
/// batch of logits. Labels must be 0 or 1.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

inline constexpr double kDefaultLambda = 0.25;

struct LossBreakdown {
  double cls = 0.0;
  double mi = 0.0;
  double total = 0.0;
  double lambda = kDefaultLambda;
};

/// total = cls + lambda·mi. Rejects negative lambda.
LossBreakdown combined_loss(double cls, double mi, double lambda = kDefaultLambda);
/// Graph version: cls + lambda·mi as a differentiable scalar.
Tensor combined_loss(const Tensor& cls, const Tensor& mi, double lambda = kDefaultLambda);

// Checkpoint layout, little-endian:
//   "MMCK" | version u16 = 1 | config digest u64 |
//   repeated until EOF: name_len u16 | name | rank u8 | dims u32 × rank |
//                       values f64 × prod(dims)
inline constexpr char kCheckpointMagic[4] = {'M', 'M', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params);
/// Rebuilds parameters for `config`. Throws CheckpointError on digest,
/// name, or shape disagreement and DataError on malformed bytes.
ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes, const ModelConfig& config);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

}  // namespace mmfuse
