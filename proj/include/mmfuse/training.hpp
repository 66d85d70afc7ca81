#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mmfuse/data_io.hpp"
#include "mmfuse/mine.hpp"
#include "mmfuse/model.hpp"

namespace mmfuse {

/// Training protocol and architecture knobs. JSON keys equal field names.
struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t runs = 5;
  std::size_t batch_size = 8;
  double lr0 = 1e-4;
  double lambda_mi = kDefaultLambda;
  std::size_t patience = 8;
  std::size_t step_size = 4;
  double gamma = 0.1;
  std::size_t max_epochs = 100;
  double split_train_frac = 0.65;
  PoolingKind pooling = PoolingKind::asp;
  FusionKind fusion = FusionKind::at;
  std::size_t proj_dim = 256;
  std::size_t asp_hidden = 128;
  Activation asp_activation = Activation::tanh;
  std::size_t fusion_hidden = 128;
  std::size_t mfb_factor = 5;
  std::size_t mfh_blocks = 2;
  std::size_t mine_hidden = 128;
  NegativeSampling negatives = NegativeSampling::shift;

  void validate() const;
  ModelConfig model_config(std::size_t text_dim, std::size_t audio_dim) const;

  nlohmann::json to_json() const;
  /// Applies the keys present in `j` on top of `base`; unknown keys throw
  /// ConfigError.
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
  static TrainConfig from_json(const nlohmann::json& j);
  std::string digest() const;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Per-class seeded shuffle, floor(n_c·frac) records of each class to train
/// (clamped so both sides keep at least one). Unlabelled records are ignored.
SplitIndices stratified_split(std::span<const UtteranceRecord> records, double train_frac,
                              std::uint64_t seed);

enum class EvalSplit { train, val, test };
EvalSplit parse_eval_split(std::string_view name);

/// Labelled records of one split exactly as train_run(config, seed, data)
/// sees them: train and val come from the stratified split of the manifest's
/// training records, test is the manifest's test split.
std::vector<UtteranceRecord> select_split(const Dataset& data, const TrainConfig& config, std::uint64_t seed,
                                          EvalSplit which);

/// lr0 · gamma^floor(epoch / step_size), epoch counted from 0.
double step_lr(double lr0, std::size_t epoch, std::size_t step_size, double gamma);

/// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Applies one update from the accumulated gradients. Parameters that did
  /// not receive a gradient count as zero-gradient. Throws NumericError,
  /// leaving every parameter untouched, if any gradient is non-finite.
  void step(double lr);
  void zero_grad();
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double beta1_;
  double beta2_;
  double eps_;
  std::size_t t_ = 0;
};

/// Stops after `patience` consecutive epochs without a strict improvement of
/// the best loss. Epochs are numbered from 1.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);

  /// Feeds one epoch's validation loss; returns true when training should stop.
  bool update(double loss);
  bool improved() const { return improved_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_loss_;
  bool improved_ = false;
};

/// Positive class = impaired (label 1).
struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  void add(int label, int predicted);
};

/// All values in percent.
struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  double specificity = 0.0;
  std::vector<std::string> warnings;  // zero-denominator metrics reported as 0
};

Metrics compute_metrics(const ConfusionMatrix& cm);
nlohmann::json metrics_json(const Metrics& m);
/// Rounds to two decimals, as printed in reports.
double round2(double percent);

/// Argmax prediction (ties → control) for every labelled record.
ConfusionMatrix evaluate(const ModelParams& params, std::span<const UtteranceRecord> records);
/// Mean cross-entropy over the labelled records, without the MI term.
double validation_loss(const ModelParams& params, std::span<const UtteranceRecord> records);

struct TrainOptions {
  std::ostream* log = nullptr;
};

struct RunResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  bool numeric_failure = false;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t skipped_mi_batches = 0;
  Metrics val_metrics;
  Metrics test_metrics;
  std::string evaluated_on;  // "test", or "val" when the test split is empty
  std::optional<ModelParams> params;
};

/// One full training run: stratified split of the training records, Adam
/// with step decay, early stopping on validation cross-entropy with best
/// weights restored, then evaluation.
RunResult train_run(const TrainConfig& config, std::uint64_t seed, const Dataset& data,
                    const TrainOptions& options = {});

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

struct RunReport {
  TrainConfig config;
  std::vector<RunResult> runs;
  bool partial = false;
  MetricSummary precision, recall, f1, accuracy, specificity;
};

/// Runs r = 0..runs-1 with seed config.seed + r, then aggregates the
/// evaluated metrics over successful runs.
RunReport multi_run(const TrainConfig& config, const Dataset& data, const TrainOptions& options = {});

/// mean and population std of per-run values.
MetricSummary summarize(std::span<const double> values);

nlohmann::json report_json(const RunReport& report);

}  // namespace mmfuse
