#include <cmath>
#include <utility>

#include "mmfuse/error.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/gradcheck.hpp"
#include "mmfuse/mine.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/ops.hpp"
#include "mmfuse/pooling.hpp"
#include "mmfuse/random.hpp"

namespace mmfuse {

namespace {

using GroupFn = std::function<GradcheckResult(Rng&)>;

Tensor randn(Shape shape, Rng& rng) { return normal_tensor(std::move(shape), 1.0, rng, true); }

// Entries bounded away from zero: |x| in [0.5, ...), random sign.
Tensor away_from_zero(Shape shape, Rng& rng, bool positive) {
  Tensor t = randn(std::move(shape), rng);
  for (double& v : t.mutable_values()) {
    const double mag = 0.5 + std::fabs(v);
    v = (positive || v >= 0.0) ? mag : -mag;
  }
  return t;
}

// Scalar readout with fixed random weights, so every output coordinate
// contributes a distinct gradient.
Tensor readout(const Tensor& y, const Tensor& weights) { return sum(mul(y, weights)); }

GradcheckResult check(std::vector<Tensor> params, const std::function<Tensor()>& f) {
  return gradcheck(f, params);
}

GradcheckResult unary_group(UnaryOp op, Rng& rng) {
  const bool positive = op == UnaryOp::log || op == UnaryOp::sqrt;
  Tensor x = (positive || op == UnaryOp::relu) ? away_from_zero({3, 3}, rng, positive) : randn({3, 3}, rng);
  Tensor w = normal_tensor({3, 3}, 1.0, rng);
  return check({x}, [&] { return readout(unary(op, x), w); });
}

GradcheckResult binary_group(BinaryOp op, Rng& rng) {
  Tensor a = randn({2, 3}, rng);
  Tensor b = op == BinaryOp::div ? away_from_zero({2, 3}, rng, false) : randn({2, 3}, rng);
  Tensor w = normal_tensor({2, 3}, 1.0, rng);
  return check({a, b}, [&] { return readout(binary(op, a, b), w); });
}

FrameMatrix random_frames(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  FrameMatrix f{rows, cols, {}};
  for (std::size_t i = 0; i < rows * cols; ++i) f.values.push_back(static_cast<float>(dist(rng)));
  return f;
}

GradcheckResult pipeline_group(PoolingKind pooling, FusionKind fusion, Rng& rng) {
  ModelConfig cfg;
  cfg.text_dim = 3;
  cfg.audio_dim = 2;
  cfg.pooling = pooling;
  cfg.fusion = fusion;
  cfg.proj_dim = 4;
  cfg.asp_hidden = 5;
  cfg.fusion_hidden = 5;
  cfg.mfb_factor = 2;
  cfg.mfh_blocks = 2;
  cfg.mine_hidden = 5;
  ModelParams params = ModelParams::init(cfg, rng());
  // Non-zero biases so their gradients are exercised away from init.
  for (auto& [name, t] : params.named_parameters()) {
    Tensor handle = t;
    for (double& v : handle.mutable_values()) {
      if (v == 0.0) v = 0.1 * std::normal_distribution<double>(0.0, 1.0)(rng);
    }
  }
  std::vector<UtteranceRecord> records;
  std::uniform_int_distribution<std::size_t> n_chunks(1, 2), n_frames(2, 4);
  for (int i = 0; i < 3; ++i) {
    UtteranceRecord r;
    r.id = "r" + std::to_string(i);
    r.label = i % 2;
    FrameMatrix t = random_frames(1, cfg.text_dim, rng);
    r.text = t.values;
    const std::size_t chunks = n_chunks(rng);
    for (std::size_t c = 0; c < chunks; ++c) r.chunks.push_back(random_frames(n_frames(rng), cfg.audio_dim, rng));
    records.push_back(std::move(r));
  }
  auto loss = [&] {
    std::vector<Tensor> logits, audio, text;
    std::vector<int> labels;
    for (const auto& r : records) {
      ForwardOutput out = forward_utterance(r, params);
      logits.push_back(reshape(out.logits, {1, 2}));
      audio.push_back(reshape(out.audio, {1, cfg.proj_dim}));
      text.push_back(reshape(out.text, {1, cfg.proj_dim}));
      labels.push_back(r.label);
    }
    Tensor cls = cross_entropy(concat(logits, 0), labels);
    Tensor mi = mi_loss(dv_lower_bound(concat(audio, 0), concat(text, 0), params.mine));
    return combined_loss(cls, mi, kDefaultLambda);
  };
  return check(params.parameters(), loss);
}

std::vector<std::pair<std::string, GroupFn>> groups() {
  std::vector<std::pair<std::string, GroupFn>> g;
  g.emplace_back("matmul", [](Rng& rng) {
    Tensor a = randn({3, 4}, rng), b = randn({4, 2}, rng), v = randn({4}, rng);
    Tensor w = normal_tensor({3, 2}, 1.0, rng), wv = normal_tensor({3}, 1.0, rng);
    return check({a, b, v}, [&] { return add(readout(matmul(a, b), w), readout(matmul(a, v), wv)); });
  });
  g.emplace_back("transpose_reshape", [](Rng& rng) {
    Tensor a = randn({2, 3}, rng);
    Tensor w = normal_tensor({3, 2}, 1.0, rng), w6 = normal_tensor({6}, 1.0, rng);
    return check({a}, [&] { return add(readout(transpose(a), w), readout(reshape(a, {6}), w6)); });
  });
  for (UnaryOp op : {UnaryOp::exp, UnaryOp::log, UnaryOp::sqrt, UnaryOp::tanh, UnaryOp::relu,
                     UnaryOp::sigmoid, UnaryOp::square, UnaryOp::neg}) {
    g.emplace_back("elementwise." + std::string(to_string(op)), [op](Rng& rng) { return unary_group(op, rng); });
  }
  for (BinaryOp op : {BinaryOp::add, BinaryOp::sub, BinaryOp::mul, BinaryOp::div}) {
    g.emplace_back("elementwise." + std::string(to_string(op)), [op](Rng& rng) { return binary_group(op, rng); });
  }
  g.emplace_back("softmax", [](Rng& rng) {
    Tensor x = randn({3, 4}, rng), v = randn({5}, rng);
    Tensor w = normal_tensor({3, 4}, 1.0, rng), w5 = normal_tensor({5}, 1.0, rng);
    return check({x, v}, [&] {
      return add(add(readout(softmax(x, 0), w), readout(softmax(x, 1), w)), readout(softmax(v), w5));
    });
  });
  g.emplace_back("log_softmax", [](Rng& rng) {
    Tensor x = randn({3, 4}, rng);
    Tensor w = normal_tensor({3, 4}, 1.0, rng);
    return check({x}, [&] { return add(readout(log_softmax(x, 1), w), readout(log_softmax(x, 0), w)); });
  });
  g.emplace_back("logsumexp", [](Rng& rng) {
    Tensor x = randn({6}, rng);
    return check({x}, [&] { return logsumexp(x); });
  });
  g.emplace_back("reductions", [](Rng& rng) {
    Tensor x = randn({3, 4}, rng);
    Tensor w3 = normal_tensor({3}, 1.0, rng), w4 = normal_tensor({4}, 1.0, rng);
    return check({x}, [&] {
      Tensor s = add(readout(sum(x, 1), w3), readout(mean(x, 0), w4));
      s = add(s, add(readout(max(x, 0), w4), readout(max(x, 1), w3)));
      return add(s, add(scale(sum(x), 0.3), add(mean(x), max(x))));
    });
  });
  g.emplace_back("concat_slice", [](Rng& rng) {
    Tensor a = randn({2, 2}, rng), b = randn({2, 3}, rng), c = randn({2, 1}, rng);
    Tensor w = normal_tensor({2, 6}, 1.0, rng), ws = normal_tensor({2, 3}, 1.0, rng);
    const std::vector<std::size_t> rows{1, 0, 1};
    Tensor wg = normal_tensor({3, 3}, 1.0, rng);
    return check({a, b, c}, [&] {
      Tensor cat = concat({a, b, c}, 1);
      Tensor s = add(readout(cat, w), readout(slice(cat, 1, 1, 4), ws));
      return add(s, readout(gather_rows(b, rows), wg));
    });
  });
  g.emplace_back("broadcast_scale_clamp", [](Rng& rng) {
    Tensor x = randn({3, 2}, rng), b = randn({2}, rng), k = randn({1}, rng);
    Tensor w = normal_tensor({3, 2}, 1.0, rng);
    return check({x, b, k}, [&] {
      Tensor y = add_broadcast(add_broadcast(x, b), k);
      return readout(clamp_min(shift(scale(y, 1.7), -0.3), -0.5), w);
    });
  });
  g.emplace_back("signed_sqrt", [](Rng& rng) {
    Tensor x = away_from_zero({5}, rng, false);
    Tensor w = normal_tensor({5}, 1.0, rng);
    return check({x}, [&] { return readout(signed_sqrt(x), w); });
  });
  g.emplace_back("l2_normalize", [](Rng& rng) {
    Tensor x = randn({5}, rng);
    Tensor w = normal_tensor({5}, 1.0, rng);
    return check({x}, [&] { return readout(l2_normalize(x), w); });
  });
  g.emplace_back("pooling.asp", [](Rng& rng) {
    Tensor h = randn({4, 3}, rng);
    AspParams p = AspParams::init(3, 5, Activation::tanh, rng);
    p.b = randn({5}, rng);
    p.k = randn({1}, rng);
    Tensor w = normal_tensor({6}, 1.0, rng);
    return check({h, p.W, p.b, p.v, p.k}, [&] { return readout(asp_pool(h, p), w); });
  });
  g.emplace_back("pooling.asp_relu", [](Rng& rng) {
    Tensor h = randn({4, 3}, rng);
    AspParams p = AspParams::init(3, 5, Activation::relu, rng);
    Tensor w = normal_tensor({6}, 1.0, rng);
    return check({h, p.W, p.v}, [&] { return readout(asp_pool(h, p), w); });
  });
  g.emplace_back("pooling.mean_max", [](Rng& rng) {
    Tensor h = randn({4, 3}, rng);
    Tensor w1 = normal_tensor({3}, 1.0, rng), w2 = normal_tensor({3}, 1.0, rng);
    return check({h}, [&] { return add(readout(mean_pool(h), w1), readout(max_pool(h), w2)); });
  });
  g.emplace_back("pooling.aggregate", [](Rng& rng) {
    Tensor a = randn({4}, rng), b = randn({4}, rng), c = randn({4}, rng);
    Tensor w = normal_tensor({4}, 1.0, rng);
    return check({a, b, c}, [&] {
      const std::vector<Tensor> chunks{a, b, c};
      return readout(utterance_aggregate(chunks), w);
    });
  });
  g.emplace_back("fusion.project", [](Rng& rng) {
    Tensor za = randn({6}, rng), ft = randn({4}, rng);
    ProjectionParams p = ProjectionParams::init(6, 4, 3, rng);
    p.audio_bias = randn({3}, rng);
    p.text_bias = randn({3}, rng);
    Tensor w1 = normal_tensor({3}, 1.0, rng), w2 = normal_tensor({3}, 1.0, rng);
    return check({za, ft, p.audio_weight, p.audio_bias, p.text_weight, p.text_bias}, [&] {
      Projected out = project(za, ft, p);
      return add(readout(out.audio, w1), readout(out.text, w2));
    });
  });
  g.emplace_back("fusion.at", [](Rng& rng) {
    Tensor a = randn({4}, rng), t = randn({4}, rng);
    AtFusionParams p = AtFusionParams::init(4, 5, rng);
    Tensor w = normal_tensor({4}, 1.0, rng), w2 = normal_tensor({2}, 1.0, rng);
    return check({a, t, p.W, p.w}, [&] {
      AtFusionOutput out = at_fusion(a, t, p);
      return add(readout(out.fused, w), readout(out.weights, w2));
    });
  });
  g.emplace_back("fusion.concat", [](Rng& rng) {
    Tensor a = randn({3}, rng), t = randn({3}, rng);
    Tensor w = normal_tensor({6}, 1.0, rng);
    return check({a, t}, [&] { return readout(concat_fusion(a, t), w); });
  });
  g.emplace_back("fusion.gmu", [](Rng& rng) {
    Tensor a = randn({3}, rng), t = randn({3}, rng);
    GmuParams p = GmuParams::init(3, rng);
    p.gate_bias = randn({3}, rng);
    Tensor w = normal_tensor({3}, 1.0, rng);
    return check({a, t, p.text_weight, p.text_bias, p.audio_weight, p.audio_bias, p.gate_weight, p.gate_bias},
                 [&] { return readout(gmu_fusion(t, a, p), w); });
  });
  g.emplace_back("fusion.mfb", [](Rng& rng) {
    Tensor a = randn({3}, rng), t = randn({3}, rng);
    MfbParams p = MfbParams::init(3, 2, 1, rng);
    Tensor w = normal_tensor({3}, 1.0, rng);
    return check({a, t, p.U[0], p.V[0]}, [&] { return readout(mfb_fusion(a, t, p), w); });
  });
  g.emplace_back("fusion.mfh", [](Rng& rng) {
    Tensor a = randn({3}, rng), t = randn({3}, rng);
    MfbParams p = MfbParams::init(3, 2, 2, rng);
    Tensor w = normal_tensor({6}, 1.0, rng);
    return check({a, t, p.U[0], p.V[0], p.U[1], p.V[1]}, [&] { return readout(mfh_fusion(a, t, p), w); });
  });
  g.emplace_back("mine.dv_bound", [](Rng& rng) {
    Tensor a = randn({4, 3}, rng), t = randn({4, 3}, rng);
    StatisticsNet net = StatisticsNet::init(6, 5, rng);
    net.b1 = randn({5}, rng);
    net.b2 = randn({5}, rng);
    std::vector<Tensor> params{a, t};
    for (const Tensor& p : net.parameters()) params.push_back(p);
    return check(params, [&] { return mi_loss(dv_lower_bound(a, t, net)); });
  });
  g.emplace_back("model.cross_entropy", [](Rng& rng) {
    Tensor logits = randn({4, 2}, rng);
    const std::vector<int> labels{0, 1, 1, 0};
    return check({logits}, [&] { return cross_entropy(logits, labels); });
  });
  for (FusionKind f : {FusionKind::at, FusionKind::concat, FusionKind::gmu, FusionKind::mfb, FusionKind::mfh}) {
    g.emplace_back("pipeline.asp." + to_string(f), [f](Rng& rng) { return pipeline_group(PoolingKind::asp, f, rng); });
  }
  g.emplace_back("pipeline.mean.at", [](Rng& rng) { return pipeline_group(PoolingKind::mean, FusionKind::at, rng); });
  g.emplace_back("pipeline.max.at", [](Rng& rng) { return pipeline_group(PoolingKind::max, FusionKind::at, rng); });
  return g;
}

struct FaultScope {
  explicit FaultScope(const std::string& op) { detail::set_backward_fault(op); }
  ~FaultScope() { detail::set_backward_fault({}); }
};

}  // namespace

std::vector<GradcheckGroup> run_gradcheck_suite(std::uint64_t seed, std::size_t points,
                                                const std::string& fault_op) {
  FaultScope fault(fault_op);
  std::vector<GradcheckGroup> out;
  for (auto& [name, fn] : groups()) {
    GradcheckGroup group;
    group.name = name;
    Rng rng(seed ^ fnv1a64(name));
    try {
      for (std::size_t i = 0; i < points; ++i) {
        const GradcheckResult r = fn(rng);
        group.max_rel_error = std::max(group.max_rel_error, r.max_rel_error);
        group.checked += r.checked;
        group.skipped += r.skipped;
      }
      const double total = static_cast<double>(group.checked + group.skipped);
      group.passed = group.max_rel_error < kGradcheckTolerance && group.checked > 0 &&
                     static_cast<double>(group.skipped) <= kGradcheckMaxSkipFraction * total;
    } catch (const Error& ex) {
      group.error = ex.what();
      group.passed = false;
    }
    out.push_back(std::move(group));
  }
  return out;
}

}  // namespace mmfuse
