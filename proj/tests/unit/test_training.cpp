#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "mmfuse/error.hpp"
#include "mmfuse/ops.hpp"
#include "mmfuse/training.hpp"

namespace mmfuse {
namespace {

std::vector<UtteranceRecord> labelled_pool(std::size_t per_class) {
  std::vector<UtteranceRecord> out;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    UtteranceRecord r;
    r.id = "r" + std::to_string(i);
    r.label = static_cast<int>(i % 2);
    out.push_back(r);
  }
  return out;
}

std::size_t count_label(const std::vector<UtteranceRecord>& pool, const std::vector<std::size_t>& idx, int label) {
  std::size_t n = 0;
  for (auto i : idx) n += pool[i].label == label;
  return n;
}

TEST(StratifiedSplit, BalancedFiftyFour) {
  const auto pool = labelled_pool(54);
  const SplitIndices s = stratified_split(pool, 0.65, 1);
  EXPECT_EQ(count_label(pool, s.train, 0), 35u);
  EXPECT_EQ(count_label(pool, s.train, 1), 35u);
  EXPECT_EQ(count_label(pool, s.val, 0), 19u);
  EXPECT_EQ(count_label(pool, s.val, 1), 19u);
}

TEST(StratifiedSplit, DisjointCoveringAndDeterministic) {
  const auto pool = labelled_pool(13);
  const SplitIndices a = stratified_split(pool, 0.65, 9), b = stratified_split(pool, 0.65, 9);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  std::vector<std::size_t> all(a.train);
  all.insert(all.end(), a.val.begin(), a.val.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
  EXPECT_NE(stratified_split(pool, 0.65, 10).train, a.train);
}

TEST(StratifiedSplit, RejectsBadInputs) {
  const auto pool = labelled_pool(5);
  EXPECT_THROW(stratified_split(pool, 1.0, 0), ConfigError);
  EXPECT_THROW(stratified_split(pool, 0.0, 0), ConfigError);
  std::vector<UtteranceRecord> one_class(pool.begin(), pool.begin() + 1);
  EXPECT_THROW(stratified_split(one_class, 0.65, 0), DataError);
}

TEST(StepLr, Schedule) {
  const double lr0 = 1e-4;
  for (std::size_t e = 0; e < 4; ++e) EXPECT_EQ(step_lr(lr0, e, 4, 0.1), lr0);
  EXPECT_DOUBLE_EQ(step_lr(lr0, 4, 4, 0.1), lr0 * 0.1);
  EXPECT_DOUBLE_EQ(step_lr(lr0, 8, 4, 0.1), lr0 * 0.01);
  EXPECT_EQ(step_lr(lr0, 37, 4, 1.0), lr0);
}

TEST(StepLr, NonIncreasing) {
  for (double gamma : {0.1, 0.5, 1.0}) {
    for (std::size_t e = 0; e < 40; ++e) EXPECT_LE(step_lr(1e-3, e + 1, 4, gamma), step_lr(1e-3, e, 4, gamma));
  }
}

TEST(Adam, FirstStepIsMinusLr) {
  Tensor w = Tensor::vector({0.5, -0.5}, true);
  Adam adam({w});
  sum(scale(w, 3.0)).backward();
  adam.step(1e-3);
  // m̂ = g and v̂ = g² after one step, so each coordinate moves by lr·|g|/(|g|+eps)
  EXPECT_NEAR(w[0], 0.5 - 1e-3 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_NEAR(w[1], -0.5 - 1e-3 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor w = Tensor::vector({1.0, -2.0}, true);
  Tensor u = Tensor::vector({3.0}, true);
  Adam adam({w, u});
  scale(sum(u), 0.0).backward();
  adam.step(0.1);
  EXPECT_EQ(w[0], 1.0);
  EXPECT_EQ(w[1], -2.0);
  EXPECT_EQ(u[0], 3.0);
}

TEST(Adam, NonFiniteGradientAbortsWithoutUpdate) {
  Tensor w = Tensor::vector({1.0, 2.0}, true);
  Adam adam({w});
  sum(w).backward();
  w.node()->grad_buffer()[1] = std::nan("");
  EXPECT_THROW(adam.step(0.1), NumericError);
  EXPECT_EQ(w[0], 1.0);
}

TEST(EarlyStopper, ScriptedStream) {
  EarlyStopper s(8);
  const std::vector<double> stream{1.0, 0.9, 0.95, 0.95, 0.95, 0.95, 0.95, 0.95, 0.95, 0.95};
  std::size_t stopped_at = 0;
  for (double l : stream) {
    if (s.update(l)) {
      stopped_at = s.epoch();
      break;
    }
  }
  EXPECT_EQ(stopped_at, 10u);
  EXPECT_EQ(s.best_epoch(), 2u);
  EXPECT_EQ(s.best_loss(), 0.9);
}

TEST(EarlyStopper, StopsAtLeastPatienceAfterBest) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> loss(0.0, 1.0);
  for (std::size_t patience = 1; patience <= 6; ++patience) {
    for (int trial = 0; trial < 50; ++trial) {
      EarlyStopper s(patience);
      while (!s.update(std::round(loss(rng) * 4.0) / 4.0)) {
      }
      EXPECT_GE(s.epoch() - s.best_epoch(), patience);
    }
  }
}

TEST(EarlyStopper, DecreasingNeverStops) {
  EarlyStopper s(8);
  for (int e = 0; e < 100; ++e) EXPECT_FALSE(s.update(1.0 / (e + 1)));
}

TEST(EarlyStopper, TieIsNotImprovement) {
  EarlyStopper s(2);
  EXPECT_FALSE(s.update(0.5));
  EXPECT_FALSE(s.update(0.5));
  EXPECT_FALSE(s.improved());
  EXPECT_TRUE(s.update(0.5));
  EXPECT_EQ(s.best_epoch(), 1u);
}

TEST(Metrics, ReferenceMatrix) {
  ConfusionMatrix cm{21, 4, 20, 3};
  const Metrics m = compute_metrics(cm);
  EXPECT_EQ(round2(m.precision), 84.00);
  EXPECT_EQ(round2(m.recall), 87.50);
  EXPECT_EQ(round2(m.f1), 85.71);
  EXPECT_EQ(round2(m.accuracy), 85.42);
  EXPECT_EQ(round2(m.specificity), 83.33);
  EXPECT_TRUE(m.warnings.empty());
}

TEST(Metrics, PerfectClassifier) {
  const Metrics m = compute_metrics({24, 0, 24, 0});
  for (double v : {m.precision, m.recall, m.f1, m.accuracy, m.specificity}) EXPECT_EQ(v, 100.0);
}

TEST(Metrics, ZeroDenominatorWarns) {
  const Metrics m = compute_metrics({0, 0, 5, 5});
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_FALSE(m.warnings.empty());
  EXPECT_THROW(compute_metrics({}), Error);
}

TEST(Metrics, SymmetricMatrixF1EqualsAccuracy) {
  const Metrics m = compute_metrics({17, 6, 17, 6});
  EXPECT_NEAR(m.f1, m.accuracy, 1e-12);
}

TEST(Metrics, AccuracyBetweenRecallAndSpecificity) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> count(0, 30);
  for (int trial = 0; trial < 500; ++trial) {
    ConfusionMatrix cm{count(rng), count(rng), count(rng), count(rng)};
    if (cm.tp + cm.fn == 0 || cm.tn + cm.fp == 0) continue;
    const Metrics m = compute_metrics(cm);
    EXPECT_GE(m.accuracy, std::min(m.recall, m.specificity) - 1e-12);
    EXPECT_LE(m.accuracy, std::max(m.recall, m.specificity) + 1e-12);
  }
}

TEST(Metrics, ConfusionCounting) {
  ConfusionMatrix cm;
  cm.add(1, 1);
  cm.add(1, 0);
  cm.add(0, 0);
  cm.add(0, 1);
  cm.add(0, 1);
  EXPECT_EQ(cm.tp, 1u);
  EXPECT_EQ(cm.fn, 1u);
  EXPECT_EQ(cm.tn, 1u);
  EXPECT_EQ(cm.fp, 2u);
}

TEST(Summarize, PopulationStd) {
  const std::vector<double> v{1, 2, 3, 4};
  const MetricSummary s = summarize(v);
  EXPECT_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.std, std::sqrt(1.25));
  const std::vector<double> one{7};
  EXPECT_EQ(summarize(one).std, 0.0);
}

TEST(TrainConfig, JsonRoundTripAndUnknownKeys) {
  TrainConfig c;
  c.fusion = FusionKind::mfb;
  c.lambda_mi = 0.1;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.digest(), c.digest());
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"learning_rate", 1}}), ConfigError);
  const TrainConfig over = TrainConfig::from_json(nlohmann::json{{"runs", 2}}, c);
  EXPECT_EQ(over.runs, 2u);
  EXPECT_EQ(over.fusion, FusionKind::mfb);
}

TEST(TrainConfig, Defaults) {
  const TrainConfig c;
  EXPECT_EQ(c.lambda_mi, 0.25);
  EXPECT_EQ(c.batch_size, 8u);
  EXPECT_EQ(c.patience, 8u);
  EXPECT_EQ(c.step_size, 4u);
  EXPECT_EQ(c.gamma, 0.1);
  EXPECT_EQ(c.runs, 5u);
  EXPECT_EQ(c.split_train_frac, 0.65);
}

class TinyTraining : public ::testing::Test {
 protected:
  static Dataset data(double sep, std::size_t n = 12) {
    SyntheticSpec spec;
    spec.n_per_class = n;
    spec.text_dim = 4;
    spec.audio_dim = 3;
    spec.separation = sep;
    spec.seed = 2;
    SyntheticDataset s = synthesize(spec);
    Dataset d;
    d.manifest = s.manifest;
    for (std::size_t i = 0; i < s.records.size(); ++i) {
      (s.manifest.utterances[i].split == Split::train ? d.train : d.test).push_back(s.records[i]);
    }
    return d;
  }
  static TrainConfig config() {
    TrainConfig c;
    c.runs = 2;
    c.max_epochs = 6;
    c.proj_dim = 8;
    c.asp_hidden = 6;
    c.fusion_hidden = 6;
    c.mine_hidden = 6;
    c.lr0 = 1e-3;
    return c;
  }
};

TEST_F(TinyTraining, ReportIsDeterministic) {
  const Dataset d = data(3.0);
  const auto a = report_json(multi_run(config(), d)).dump();
  const auto b = report_json(multi_run(config(), d)).dump();
  EXPECT_EQ(a, b);
}

TEST_F(TinyTraining, RunRestoresBestWeights) {
  const Dataset d = data(3.0);
  const RunResult r = train_run(config(), 4, d);
  ASSERT_TRUE(r.ok) << r.error;
  ASSERT_TRUE(r.params.has_value());
  const auto val = select_split(d, config(), 4, EvalSplit::val);
  EXPECT_DOUBLE_EQ(validation_loss(*r.params, val), r.best_val_loss);
  EXPECT_LE(r.best_epoch, r.epochs);
  EXPECT_EQ(r.evaluated_on, "test");
}

TEST_F(TinyTraining, SameSeedRunsMatch) {
  TrainConfig c = config();
  c.runs = 1;
  const RunResult a = train_run(c, 3, data(3.0)), b = train_run(c, 3, data(3.0));
  EXPECT_EQ(a.best_val_loss, b.best_val_loss);
  EXPECT_EQ(a.test_metrics.accuracy, b.test_metrics.accuracy);
}

TEST_F(TinyTraining, EmptyTestSplitEvaluatesOnValidation) {
  Dataset d = data(3.0);
  d.train.insert(d.train.end(), d.test.begin(), d.test.end());
  d.test.clear();
  const RunResult r = train_run(config(), 0, d);
  ASSERT_TRUE(r.ok) << r.error;
  EXPECT_EQ(r.evaluated_on, "val");
}

TEST_F(TinyTraining, SingleRunHasZeroStd) {
  TrainConfig c = config();
  c.runs = 1;
  const RunReport r = multi_run(c, data(3.0));
  EXPECT_EQ(r.accuracy.std, 0.0);
  EXPECT_FALSE(r.partial);
}

TEST_F(TinyTraining, BatchOfOneSkipsMiTerm) {
  TrainConfig c = config();
  c.batch_size = 1;
  c.max_epochs = 1;
  const RunResult r = train_run(c, 0, data(3.0, 4));
  ASSERT_TRUE(r.ok) << r.error;
  EXPECT_GT(r.skipped_mi_batches, 0u);
}

TEST_F(TinyTraining, LambdaZeroStillTrains) {
  TrainConfig c = config();
  c.lambda_mi = 0.0;
  const RunResult r = train_run(c, 0, data(3.0));
  EXPECT_TRUE(r.ok) << r.error;
  EXPECT_EQ(r.skipped_mi_batches, 0u);
}

TEST_F(TinyTraining, UnlabelledRecordsExcluded) {
  Dataset d = data(3.0);
  UtteranceRecord extra = d.test.front();
  extra.id = "unlabelled";
  extra.label = kUnlabeled;
  d.test.push_back(extra);
  const auto test = select_split(d, config(), 0, EvalSplit::test);
  EXPECT_EQ(test.size(), d.test.size() - 1);
}

TEST(EvalSplit, Parse) {
  EXPECT_EQ(parse_eval_split("val"), EvalSplit::val);
  EXPECT_THROW(parse_eval_split("dev"), ConfigError);
}

}  // namespace
}  // namespace mmfuse
