#include "mmfuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "mmfuse/error.hpp"
#include "mmfuse/ops.hpp"

namespace mmfuse {

using nlohmann::json;

namespace {

std::string to_string(NegativeSampling mode) {
  return mode == NegativeSampling::shift ? "shift" : "permutation";
}

NegativeSampling parse_negatives(const std::string& name) {
  if (name == "shift") return NegativeSampling::shift;
  if (name == "permutation") return NegativeSampling::permutation;
  throw ConfigError("unknown negatives mode '" + name + "' (expected shift or permutation)");
}

}  // namespace

void TrainConfig::validate() const {
  if (runs == 0) throw ConfigError("runs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be a positive finite number");
  if (!(lambda_mi >= 0.0) || !std::isfinite(lambda_mi)) throw ConfigError("lambda_mi must be >= 0");
  if (patience == 0) throw ConfigError("patience must be >= 1");
  if (step_size == 0) throw ConfigError("step_size must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
  if (!(split_train_frac > 0.0 && split_train_frac < 1.0)) {
    throw ConfigError("split_train_frac must lie strictly between 0 and 1");
  }
  if (proj_dim == 0 || asp_hidden == 0 || fusion_hidden == 0 || mine_hidden == 0 || mfb_factor == 0 ||
      mfh_blocks == 0) {
    throw ConfigError("model widths, mfb_factor and mfh_blocks must be >= 1");
  }
}

ModelConfig TrainConfig::model_config(std::size_t text_dim, std::size_t audio_dim) const {
  ModelConfig m;
  m.text_dim = text_dim;
  m.audio_dim = audio_dim;
  m.pooling = pooling;
  m.fusion = fusion;
  m.proj_dim = proj_dim;
  m.asp_hidden = asp_hidden;
  m.asp_activation = asp_activation;
  m.fusion_hidden = fusion_hidden;
  m.mfb_factor = mfb_factor;
  m.mfh_blocks = mfh_blocks;
  m.mine_hidden = mine_hidden;
  return m;
}

json TrainConfig::to_json() const {
  return {{"seed", seed},
          {"runs", runs},
          {"batch_size", batch_size},
          {"lr0", lr0},
          {"lambda_mi", lambda_mi},
          {"patience", patience},
          {"step_size", step_size},
          {"gamma", gamma},
          {"max_epochs", max_epochs},
          {"split_train_frac", split_train_frac},
          {"pooling", mmfuse::to_string(pooling)},
          {"fusion", mmfuse::to_string(fusion)},
          {"proj_dim", proj_dim},
          {"asp_hidden", asp_hidden},
          {"asp_activation", mmfuse::to_string(asp_activation)},
          {"fusion_hidden", fusion_hidden},
          {"mfb_factor", mfb_factor},
          {"mfh_blocks", mfh_blocks},
          {"mine_hidden", mine_hidden},
          {"negatives", to_string(negatives)}};
}

TrainConfig TrainConfig::from_json(const json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const json& j, const TrainConfig& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig c = base;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "runs") c.runs = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "lr0") c.lr0 = value.get<double>();
      else if (key == "lambda_mi") c.lambda_mi = value.get<double>();
      else if (key == "patience") c.patience = value.get<std::size_t>();
      else if (key == "step_size") c.step_size = value.get<std::size_t>();
      else if (key == "gamma") c.gamma = value.get<double>();
      else if (key == "max_epochs") c.max_epochs = value.get<std::size_t>();
      else if (key == "split_train_frac") c.split_train_frac = value.get<double>();
      else if (key == "pooling") c.pooling = parse_pooling(value.get<std::string>());
      else if (key == "fusion") c.fusion = parse_fusion(value.get<std::string>());
      else if (key == "proj_dim") c.proj_dim = value.get<std::size_t>();
      else if (key == "asp_hidden") c.asp_hidden = value.get<std::size_t>();
      else if (key == "asp_activation") c.asp_activation = parse_activation(value.get<std::string>());
      else if (key == "fusion_hidden") c.fusion_hidden = value.get<std::size_t>();
      else if (key == "mfb_factor") c.mfb_factor = value.get<std::size_t>();
      else if (key == "mfh_blocks") c.mfh_blocks = value.get<std::size_t>();
      else if (key == "mine_hidden") c.mine_hidden = value.get<std::size_t>();
      else if (key == "negatives") c.negatives = parse_negatives(value.get<std::string>());
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const json::exception& ex) {
      throw ConfigError("config key '" + key + "': " + ex.what());
    }
  }
  return c;
}

std::string TrainConfig::digest() const { return hex_digest(fnv1a64(to_json().dump())); }

SplitIndices stratified_split(std::span<const UtteranceRecord> records, double train_frac,
                              std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw ConfigError("split fraction must lie strictly between 0 and 1");
  }
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int label = records[i].label;
    if (label == kControl || label == kImpaired) by_class[label].push_back(i);
  }
  Rng rng(seed);
  SplitIndices out;
  for (int c = 0; c < 2; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) throw DataError(DataErrc::invalid_record, "class " + std::to_string(c) + " is absent");
    if (idx.size() < 2) {
      throw DataError(DataErrc::invalid_record,
                      "class " + std::to_string(c) + " needs at least 2 records to split");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(idx.size()) * train_frac + 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.insert(out.val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

double step_lr(double lr0, std::size_t epoch, std::size_t step_size, double gamma) {
  if (step_size == 0) throw ConfigError("step_size must be >= 1");
  return lr0 * std::pow(gamma, static_cast<double>(epoch / step_size));
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  for (const Tensor& p : params_) {
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient; optimizer step aborted");
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto grad = params_[i].grad();
    auto values = params_[i].mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      values[j] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

EarlyStopper::EarlyStopper(std::size_t patience)
    : patience_(patience), best_loss_(std::numeric_limits<double>::infinity()) {
  if (patience == 0) throw ConfigError("patience must be >= 1");
}

bool EarlyStopper::update(double loss) {
  ++epoch_;
  improved_ = loss < best_loss_;
  if (improved_) {
    best_loss_ = loss;
    best_epoch_ = epoch_;
    since_best_ = 0;
    return false;
  }
  ++since_best_;
  return since_best_ >= patience_;
}

void ConfusionMatrix::add(int label, int predicted) {
  if (label == kImpaired) {
    (predicted == kImpaired ? tp : fn) += 1;
  } else if (label == kControl) {
    (predicted == kImpaired ? fp : tn) += 1;
  }
}

Metrics compute_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw Error("compute_metrics: empty confusion matrix");
  Metrics m;
  auto ratio = [&](std::size_t num, std::size_t den, const char* name) {
    if (den == 0) {
      m.warnings.push_back(std::string(name) + " undefined (zero denominator), reported as 0");
      return 0.0;
    }
    return 100.0 * static_cast<double>(num) / static_cast<double>(den);
  };
  m.precision = ratio(cm.tp, cm.tp + cm.fp, "precision");
  m.recall = ratio(cm.tp, cm.tp + cm.fn, "recall");
  m.specificity = ratio(cm.tn, cm.tn + cm.fp, "specificity");
  m.accuracy = ratio(cm.tp + cm.tn, cm.total(), "accuracy");
  if (m.precision + m.recall > 0.0) {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  } else {
    m.warnings.push_back("f1 undefined (precision + recall = 0), reported as 0");
  }
  return m;
}

double round2(double percent) { return std::round(percent * 100.0) / 100.0; }

json metrics_json(const Metrics& m) {
  json j = {{"precision", round2(m.precision)},
            {"recall", round2(m.recall)},
            {"f1", round2(m.f1)},
            {"accuracy", round2(m.accuracy)},
            {"specificity", round2(m.specificity)}};
  if (!m.warnings.empty()) j["warnings"] = m.warnings;
  return j;
}

ConfusionMatrix evaluate(const ModelParams& params, std::span<const UtteranceRecord> records) {
  NoGradGuard no_grad;
  ConfusionMatrix cm;
  for (const UtteranceRecord& rec : records) {
    if (rec.label == kUnlabeled) continue;
    const Tensor logits = forward_utterance(rec, params).logits;
    cm.add(rec.label, logits[1] > logits[0] ? kImpaired : kControl);
  }
  return cm;
}

double validation_loss(const ModelParams& params, std::span<const UtteranceRecord> records) {
  NoGradGuard no_grad;
  double total = 0.0;
  std::size_t n = 0;
  for (const UtteranceRecord& rec : records) {
    if (rec.label == kUnlabeled) continue;
    const Tensor logits = forward_utterance(rec, params).logits;
    const int label = rec.label;
    total += cross_entropy(reshape(logits, {1, 2}), std::span<const int>(&label, 1)).item();
    ++n;
  }
  if (n == 0) throw Error("validation_loss: no labelled records");
  return total / static_cast<double>(n);
}

namespace {

struct BatchLoss {
  Tensor total;
  bool mi_skipped = false;
};

BatchLoss batch_loss(const TrainConfig& config, const ModelParams& params,
                     std::span<const UtteranceRecord* const> batch, Rng& rng) {
  std::vector<Tensor> logits, audio, text;
  std::vector<int> labels;
  const std::size_t d = params.config.proj_dim;
  for (const UtteranceRecord* rec : batch) {
    ForwardOutput out = forward_utterance(*rec, params);
    logits.push_back(reshape(out.logits, {1, 2}));
    audio.push_back(reshape(out.audio, {1, d}));
    text.push_back(reshape(out.text, {1, d}));
    labels.push_back(rec->label);
  }
  Tensor cls = cross_entropy(concat(logits, 0), labels);
  if (config.lambda_mi == 0.0) return {cls, false};
  if (batch.size() < 2) return {cls, true};
  MiBatchEstimate est = dv_lower_bound(concat(audio, 0), concat(text, 0), params.mine, config.negatives, &rng);
  return {combined_loss(cls, mi_loss(est), config.lambda_mi), false};
}

std::vector<UtteranceRecord> labelled(std::span<const UtteranceRecord> records) {
  std::vector<UtteranceRecord> out;
  for (const UtteranceRecord& r : records) {
    if (r.label != kUnlabeled) out.push_back(r);
  }
  return out;
}

}  // namespace

EvalSplit parse_eval_split(std::string_view name) {
  if (name == "train") return EvalSplit::train;
  if (name == "val") return EvalSplit::val;
  if (name == "test") return EvalSplit::test;
  throw ConfigError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

std::vector<UtteranceRecord> select_split(const Dataset& data, const TrainConfig& config, std::uint64_t seed,
                                          EvalSplit which) {
  if (which == EvalSplit::test) return labelled(data.test);
  const std::vector<UtteranceRecord> pool = labelled(data.train);
  const SplitIndices split = stratified_split(pool, config.split_train_frac, seed);
  std::vector<UtteranceRecord> out;
  for (auto i : which == EvalSplit::train ? split.train : split.val) out.push_back(pool[i]);
  return out;
}

RunResult train_run(const TrainConfig& config, std::uint64_t seed, const Dataset& data,
                    const TrainOptions& options) {
  config.validate();
  RunResult result;
  result.seed = seed;
  try {
    const std::vector<UtteranceRecord> train_set = select_split(data, config, seed, EvalSplit::train);
    const std::vector<UtteranceRecord> val_set = select_split(data, config, seed, EvalSplit::val);

    ModelParams params =
        ModelParams::init(config.model_config(data.manifest.text_dim, data.manifest.audio_dim), seed);
    ModelParams best = params.clone();
    Adam adam(params.parameters());
    EarlyStopper stopper(config.patience);
    Rng rng(seed ^ 0x5deece66dULL);

    std::vector<const UtteranceRecord*> order;
    for (const auto& r : train_set) order.push_back(&r);

    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
      const double lr = step_lr(config.lr0, epoch, config.step_size, config.gamma);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
        const std::size_t end = std::min(order.size(), begin + config.batch_size);
        adam.zero_grad();
        BatchLoss loss = batch_loss(config, params,
                                    std::span<const UtteranceRecord* const>(order).subspan(begin, end - begin), rng);
        if (loss.mi_skipped) {
          ++result.skipped_mi_batches;
          if (options.log) *options.log << "batch of size 1: MI term skipped\n";
        }
        loss.total.backward();
        adam.step(lr);
      }
      const double val_loss = validation_loss(params, val_set);
      const bool stop = stopper.update(val_loss);
      if (stopper.improved()) best.assign(params);
      if (options.log) {
        *options.log << "seed " << seed << " epoch " << stopper.epoch() << " lr " << lr << " val_loss "
                     << val_loss << (stopper.improved() ? " *" : "") << '\n';
      }
      if (stop) break;
    }
    params.assign(best);
    result.epochs = stopper.epoch();
    result.best_epoch = stopper.best_epoch();
    result.best_val_loss = stopper.best_loss();
    result.val_metrics = compute_metrics(evaluate(params, val_set));
    const std::vector<UtteranceRecord> test = labelled(data.test);
    if (test.empty()) {
      result.test_metrics = result.val_metrics;
      result.evaluated_on = "val";
    } else {
      result.test_metrics = compute_metrics(evaluate(params, test));
      result.evaluated_on = "test";
    }
    result.params = std::move(params);
    result.ok = true;
  } catch (const NumericError& ex) {
    result.error = ex.what();
    result.numeric_failure = true;
  } catch (const Error& ex) {
    result.error = ex.what();
  }
  if (!result.ok && options.log) *options.log << "run with seed " << seed << " failed: " << result.error << '\n';
  return result;
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  if (values.empty()) return s;
  double total = 0.0;
  for (double v : values) total += v;
  s.mean = total / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

RunReport multi_run(const TrainConfig& config, const Dataset& data, const TrainOptions& options) {
  config.validate();
  RunReport report;
  report.config = config;
  for (std::size_t r = 0; r < config.runs; ++r) {
    report.runs.push_back(train_run(config, config.seed + r, data, options));
  }
  std::vector<double> p, rc, f, a, s;
  for (const RunResult& run : report.runs) {
    if (!run.ok) {
      report.partial = true;
      continue;
    }
    p.push_back(run.test_metrics.precision);
    rc.push_back(run.test_metrics.recall);
    f.push_back(run.test_metrics.f1);
    a.push_back(run.test_metrics.accuracy);
    s.push_back(run.test_metrics.specificity);
  }
  report.precision = summarize(p);
  report.recall = summarize(rc);
  report.f1 = summarize(f);
  report.accuracy = summarize(a);
  report.specificity = summarize(s);
  return report;
}

json report_json(const RunReport& report) {
  json per_run = json::array();
  for (const RunResult& run : report.runs) {
    json r = {{"seed", run.seed}, {"status", run.ok ? "ok" : "failed"}};
    if (run.ok) {
      r["epochs"] = run.epochs;
      r["best_epoch"] = run.best_epoch;
      r["best_val_loss"] = run.best_val_loss;
      r["evaluated_on"] = run.evaluated_on;
      r["metrics"] = metrics_json(run.test_metrics);
      r["val_metrics"] = metrics_json(run.val_metrics);
      if (run.skipped_mi_batches) r["skipped_mi_batches"] = run.skipped_mi_batches;
    } else {
      r["error"] = run.error;
    }
    per_run.push_back(std::move(r));
  }
  auto summary = [](const MetricSummary& s) { return json{{"mean", round2(s.mean)}, {"std", round2(s.std)}}; };
  return {{"config_digest", report.config.digest()},
          {"config", report.config.to_json()},
          {"per_run", per_run},
          {"partial", report.partial},
          {"aggregate",
           {{"precision", summary(report.precision)},
            {"recall", summary(report.recall)},
            {"f1", summary(report.f1)},
            {"accuracy", summary(report.accuracy)},
            {"specificity", summary(report.specificity)}}}};
}

}  // namespace mmfuse
