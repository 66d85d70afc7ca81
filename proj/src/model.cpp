#include "mmfuse/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "mmfuse/error.hpp"
#include "mmfuse/ops.hpp"

namespace mmfuse {

using nlohmann::json;

std::string to_string(PoolingKind kind) {
  switch (kind) {
    case PoolingKind::asp: return "asp";
    case PoolingKind::mean: return "mean";
    case PoolingKind::max: return "max";
  }
  return "?";
}

std::string to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::at: return "at";
    case FusionKind::concat: return "concat";
    case FusionKind::gmu: return "gmu";
    case FusionKind::mfb: return "mfb";
    case FusionKind::mfh: return "mfh";
  }
  return "?";
}

PoolingKind parse_pooling(const std::string& name) {
  if (name == "asp") return PoolingKind::asp;
  if (name == "mean") return PoolingKind::mean;
  if (name == "max") return PoolingKind::max;
  throw ConfigError("unknown pooling '" + name + "' (expected asp, mean or max)");
}

FusionKind parse_fusion(const std::string& name) {
  if (name == "at") return FusionKind::at;
  if (name == "concat") return FusionKind::concat;
  if (name == "gmu") return FusionKind::gmu;
  if (name == "mfb") return FusionKind::mfb;
  if (name == "mfh") return FusionKind::mfh;
  throw ConfigError("unknown fusion '" + name + "' (expected at, concat, gmu, mfb or mfh)");
}

std::string to_string(Activation activation) {
  return activation == Activation::tanh ? "tanh" : "relu";
}

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + name + "' (expected tanh or relu)");
}

std::size_t ModelConfig::pooled_dim() const {
  return pooling == PoolingKind::asp ? 2 * audio_dim : audio_dim;
}

std::size_t ModelConfig::head_input_dim() const {
  switch (fusion) {
    case FusionKind::concat: return 2 * proj_dim;
    case FusionKind::mfh: return mfh_blocks * proj_dim;
    default: return proj_dim;
  }
}

void ModelConfig::validate() const {
  if (text_dim == 0 || audio_dim == 0) throw ConfigError("model input dims must be positive");
  if (proj_dim == 0 || asp_hidden == 0 || fusion_hidden == 0 || mine_hidden == 0) {
    throw ConfigError("model widths must be positive");
  }
  if (mfb_factor == 0) throw ConfigError("mfb_factor must be >= 1");
  if (mfh_blocks == 0) throw ConfigError("mfh_blocks must be >= 1");
}

json ModelConfig::to_json() const {
  return {{"d_t", text_dim},
          {"d_a", audio_dim},
          {"pooling", to_string(pooling)},
          {"fusion", to_string(fusion)},
          {"proj_dim", proj_dim},
          {"asp_hidden", asp_hidden},
          {"asp_activation", to_string(asp_activation)},
          {"fusion_hidden", fusion_hidden},
          {"mfb_factor", mfb_factor},
          {"mfh_blocks", mfh_blocks},
          {"mine_hidden", mine_hidden}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    c.text_dim = j.at("d_t").get<std::size_t>();
    c.audio_dim = j.at("d_a").get<std::size_t>();
    c.pooling = parse_pooling(j.at("pooling").get<std::string>());
    c.fusion = parse_fusion(j.at("fusion").get<std::string>());
    c.proj_dim = j.at("proj_dim").get<std::size_t>();
    c.asp_hidden = j.at("asp_hidden").get<std::size_t>();
    c.asp_activation = parse_activation(j.at("asp_activation").get<std::string>());
    c.fusion_hidden = j.at("fusion_hidden").get<std::size_t>();
    c.mfb_factor = j.at("mfb_factor").get<std::size_t>();
    c.mfh_blocks = j.at("mfh_blocks").get<std::size_t>();
    c.mine_hidden = j.at("mine_hidden").get<std::size_t>();
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("model config: ") + ex.what());
  }
  c.validate();
  return c;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : bytes) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex_digest(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(digest));
  return buf;
}

std::uint64_t ModelConfig::digest() const { return fnv1a64(to_json().dump()); }

namespace {

template <class Params, class F>
void visit_parameters(Params& p, F&& fn) {
  if (p.asp) {
    fn("asp.W", p.asp->W);
    fn("asp.b", p.asp->b);
    fn("asp.v", p.asp->v);
    fn("asp.k", p.asp->k);
  }
  fn("proj.audio_weight", p.proj.audio_weight);
  fn("proj.audio_bias", p.proj.audio_bias);
  fn("proj.text_weight", p.proj.text_weight);
  fn("proj.text_bias", p.proj.text_bias);
  if (auto* at = std::get_if<AtFusionParams>(&p.fusion)) {
    fn("fusion.W", at->W);
    fn("fusion.w", at->w);
  } else if (auto* gmu = std::get_if<GmuParams>(&p.fusion)) {
    fn("fusion.text_weight", gmu->text_weight);
    fn("fusion.text_bias", gmu->text_bias);
    fn("fusion.audio_weight", gmu->audio_weight);
    fn("fusion.audio_bias", gmu->audio_bias);
    fn("fusion.gate_weight", gmu->gate_weight);
    fn("fusion.gate_bias", gmu->gate_bias);
  } else if (auto* mfb = std::get_if<MfbParams>(&p.fusion)) {
    for (std::size_t i = 0; i < mfb->U.size(); ++i) {
      fn("fusion.U" + std::to_string(i), mfb->U[i]);
      fn("fusion.V" + std::to_string(i), mfb->V[i]);
    }
  }
  fn("mine.W1", p.mine.W1);
  fn("mine.b1", p.mine.b1);
  fn("mine.W2", p.mine.W2);
  fn("mine.b2", p.mine.b2);
  fn("mine.W3", p.mine.W3);
  fn("mine.b3", p.mine.b3);
  fn("head.W", p.head.W);
  fn("head.b", p.head.b);
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelParams p;
  p.config = config;
  if (config.pooling == PoolingKind::asp) {
    p.asp = AspParams::init(config.audio_dim, config.asp_hidden, config.asp_activation, rng);
  }
  p.proj = ProjectionParams::init(config.pooled_dim(), config.text_dim, config.proj_dim, rng);
  switch (config.fusion) {
    case FusionKind::at: p.fusion = AtFusionParams::init(config.proj_dim, config.fusion_hidden, rng); break;
    case FusionKind::concat: p.fusion = std::monostate{}; break;
    case FusionKind::gmu: p.fusion = GmuParams::init(config.proj_dim, rng); break;
    case FusionKind::mfb: p.fusion = MfbParams::init(config.proj_dim, config.mfb_factor, 1, rng); break;
    case FusionKind::mfh:
      p.fusion = MfbParams::init(config.proj_dim, config.mfb_factor, config.mfh_blocks, rng);
      break;
  }
  p.mine = StatisticsNet::init(2 * config.proj_dim, config.mine_hidden, rng);
  p.head.W = fan_in_uniform(2, config.head_input_dim(), rng);
  p.head.b = Tensor::zeros({2}, true);
  return p;
}

std::vector<NamedTensor> ModelParams::named_parameters() const {
  std::vector<NamedTensor> out;
  visit_parameters(*this, [&](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
  return out;
}

std::vector<Tensor> ModelParams::parameters() const {
  std::vector<Tensor> out;
  visit_parameters(*this, [&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams copy = *this;
  visit_parameters(copy, [](const std::string&, Tensor& t) { t = t.clone(); });
  return copy;
}

void ModelParams::assign(const ModelParams& other) {
  auto src = other.named_parameters();
  std::size_t i = 0;
  visit_parameters(*this, [&](const std::string& name, Tensor& t) {
    if (i >= src.size() || src[i].name != name || src[i].tensor.shape() != t.shape()) {
      throw CheckpointError("assign: parameter layout differs at '" + name + "'");
    }
    auto dst = t.mutable_values();
    auto from = src[i].tensor.values();
    std::copy(from.begin(), from.end(), dst.begin());
    ++i;
  });
  if (i != src.size()) throw CheckpointError("assign: parameter count differs");
}

void ModelParams::zero_grad() {
  visit_parameters(*this, [](const std::string&, Tensor& t) { t.zero_grad(); });
}

ForwardOutput forward_utterance(const UtteranceRecord& record, const ModelParams& params) {
  const ModelConfig& cfg = params.config;
  if (record.chunks.empty()) {
    throw DimensionError("utterance '" + record.id + "' has no audio chunks");
  }
  if (record.text_dim() != cfg.text_dim) {
    throw DimensionError("utterance '" + record.id + "' text dim " + std::to_string(record.text_dim()) +
                         " != model d_t " + std::to_string(cfg.text_dim));
  }
  std::vector<Tensor> pooled;
  pooled.reserve(record.chunks.size());
  for (const FrameMatrix& chunk : record.chunks) {
    if (chunk.cols != cfg.audio_dim) {
      throw DimensionError("utterance '" + record.id + "' frame dim " + std::to_string(chunk.cols) +
                           " != model d_a " + std::to_string(cfg.audio_dim));
    }
    Tensor frames = to_tensor(chunk);
    switch (cfg.pooling) {
      case PoolingKind::asp: pooled.push_back(asp_pool(frames, *params.asp)); break;
      case PoolingKind::mean: pooled.push_back(mean_pool(frames)); break;
      case PoolingKind::max: pooled.push_back(max_pool(frames)); break;
    }
  }
  Tensor audio = utterance_aggregate(pooled);
  Projected p = project(audio, to_tensor(record.text), params.proj);

  Tensor fused;
  switch (cfg.fusion) {
    case FusionKind::at: fused = at_fusion(p.audio, p.text, std::get<AtFusionParams>(params.fusion)).fused; break;
    case FusionKind::concat: fused = concat_fusion(p.audio, p.text); break;
    case FusionKind::gmu: fused = gmu_fusion(p.text, p.audio, std::get<GmuParams>(params.fusion)); break;
    case FusionKind::mfb: fused = mfb_fusion(p.audio, p.text, std::get<MfbParams>(params.fusion)); break;
    case FusionKind::mfh: fused = mfh_fusion(p.audio, p.text, std::get<MfbParams>(params.fusion)); break;
  }
  Tensor logits = add(matmul(params.head.W, fused), params.head.b);
  return {logits, p.audio, p.text};
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(1) != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  std::vector<double> mask(logits.numel(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != kControl && labels[i] != kImpaired) {
      throw Error("cross_entropy: label " + std::to_string(labels[i]) + " is not 0 or 1");
    }
    mask[i * 2 + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  Tensor picked = mul(log_softmax(logits, 1), Tensor::from(logits.shape(), std::move(mask)));
  return scale(sum(picked), -1.0 / static_cast<double>(labels.size()));
}

LossBreakdown combined_loss(double cls, double mi, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda_mi must be >= 0");
  LossBreakdown out;
  out.cls = cls;
  out.mi = mi;
  out.lambda = lambda;
  out.total = cls + lambda * mi;
  return out;
}

Tensor combined_loss(const Tensor& cls, const Tensor& mi, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda_mi must be >= 0");
  return add(cls, scale(mi, lambda));
}

namespace {

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int n) {
  for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t& pos, int n) {
  if (bytes.size() - pos < static_cast<std::size_t>(n)) {
    throw DataError(DataErrc::truncated, "checkpoint ends inside a field");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
  pos += static_cast<std::size_t>(n);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_le(out, kCheckpointVersion, 2);
  put_le(out, params.config.digest(), 8);
  for (const auto& [name, t] : params.named_parameters()) {
    put_le(out, name.size(), 2);
    out.insert(out.end(), name.begin(), name.end());
    put_le(out, t.rank(), 1);
    for (auto d : t.shape()) put_le(out, d, 4);
    for (double v : t.values()) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  }
  return out;
}

ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes, const ModelConfig& config) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw DataError(DataErrc::bad_magic, "expected \"MMCK\" checkpoint header");
  }
  std::size_t pos = 4;
  const auto version = get_le(bytes, pos, 2);
  if (version != kCheckpointVersion) {
    throw DataError(DataErrc::version_mismatch, "checkpoint version " + std::to_string(version));
  }
  const std::uint64_t digest = get_le(bytes, pos, 8);
  if (digest != config.digest()) {
    throw CheckpointError("checkpoint digest " + hex_digest(digest) + " does not match config digest " +
                          hex_digest(config.digest()));
  }
  std::map<std::string, std::pair<Shape, std::vector<double>>> blobs;
  while (pos < bytes.size()) {
    const auto name_len = get_le(bytes, pos, 2);
    if (bytes.size() - pos < name_len) throw DataError(DataErrc::truncated, "checkpoint name");
    std::string name(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
    pos += name_len;
    const auto rank = get_le(bytes, pos, 1);
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(get_le(bytes, pos, 4));
    const std::size_t n = numel(shape);
    if ((bytes.size() - pos) / 8 < n) throw DataError(DataErrc::truncated, "checkpoint values of " + name);
    std::vector<double> values(n);
    for (double& v : values) v = std::bit_cast<double>(get_le(bytes, pos, 8));
    if (!blobs.emplace(name, std::make_pair(std::move(shape), std::move(values))).second) {
      throw CheckpointError("checkpoint repeats parameter '" + name + "'");
    }
  }
  ModelParams params = ModelParams::init(config, 0);
  std::size_t matched = 0;
  visit_parameters(params, [&](const std::string& name, Tensor& t) {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw CheckpointError("checkpoint lacks parameter '" + name + "'");
    if (it->second.first != t.shape()) {
      throw CheckpointError("parameter '" + name + "' has shape " + shape_str(it->second.first) +
                            ", model expects " + shape_str(t.shape()));
    }
    std::copy(it->second.second.begin(), it->second.second.end(), t.mutable_values().begin());
    ++matched;
  });
  if (matched != blobs.size()) throw CheckpointError("checkpoint has parameters the model does not");
  return params;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(DataErrc::io, "cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataErrc::missing_file, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes, config);
}

}  // namespace mmfuse
