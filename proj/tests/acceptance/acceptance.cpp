// One PASS/FAIL line per acceptance criterion. Exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfuse/cli.hpp"
#include "mmfuse/data_io.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/gradcheck.hpp"
#include "mmfuse/mine.hpp"
#include "mmfuse/mine_fit.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/ops.hpp"
#include "mmfuse/pooling.hpp"
#include "mmfuse/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmfuse;

namespace {

constexpr double kGradcheckSeconds = 60.0;
constexpr int kAspInstances = 200;
constexpr double kIdentityTol = 1e-10;
constexpr std::size_t kMinePairs = 10000;
constexpr double kMineTol = 0.05;
constexpr double kMineIndependentMax = 0.05;
constexpr double kMineFitSeconds = 120.0;
constexpr double kSeparatedAccuracy = 95.0;
constexpr double kChanceAccuracy = 50.0;
constexpr double kChanceBand = 10.0;
constexpr double kEndToEndSeconds = 300.0;
// Ablation sweeps use a reduced protocol on a smaller synthetic set.
constexpr std::size_t kAblationRuns = 2;
constexpr std::size_t kAblationPerClass = 30;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& ex) {
    o = {false, std::string("exception: ") + ex.what()};
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(precision);
  s << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s.setf(std::ios::scientific);
  s.precision(2);
  s << v;
  return s.str();
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("mmfuse_accept_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

int cli(const std::vector<std::string>& args, std::string* out_text = nullptr) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (out_text) *out_text = out.str();
  if (code != 0) std::cerr << err.str();
  return code;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  return json::parse(in);
}

Tensor from_rows(const std::vector<std::vector<double>>& rows) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor::from({rows.size(), rows.front().size()}, flat);
}

std::vector<std::vector<double>> gaussian_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<std::vector<double>> m(n, std::vector<double>(d));
  for (auto& r : m) {
    for (double& v : r) v = g(rng);
  }
  return m;
}

double max_abs_diff(const Tensor& a, const std::vector<double>& b) {
  if (a.numel() != b.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Outcome gradient_suite() {
  const auto start = Clock::now();
  const std::vector<GradcheckGroup> groups = run_gradcheck_suite(0, 10);
  const double secs = seconds_since(start);
  double worst = 0.0;
  std::vector<std::string> failed;
  for (const auto& g : groups) {
    worst = std::max(worst, g.max_rel_error);
    if (!g.passed) failed.push_back(g.name);
  }
  std::string detail = std::to_string(groups.size()) + " groups, max rel. error " + sci(worst) + ", " +
                       fmt(secs, 1) + " s";
  for (const auto& f : failed) detail += ", failed " + f;
  return {failed.empty() && worst < kGradcheckTolerance && secs < kGradcheckSeconds, detail};
}

// e_t = vᵀ act(W h_t + b) + k, α = softmax(e), μ = Σ α h, σ = sqrt(max(Σ α h² − μ², floor))
std::vector<double> asp_direct(const std::vector<std::vector<double>>& h, const std::vector<std::vector<double>>& W,
                               const std::vector<double>& b, const std::vector<double>& v, double k, bool relu) {
  const std::size_t T = h.size(), D = h[0].size(), H = W.size();
  std::vector<double> e(T);
  for (std::size_t t = 0; t < T; ++t) {
    double s = k;
    for (std::size_t j = 0; j < H; ++j) {
      double z = b[j];
      for (std::size_t d = 0; d < D; ++d) z += W[j][d] * h[t][d];
      s += v[j] * (relu ? std::max(0.0, z) : std::tanh(z));
    }
    e[t] = s;
  }
  const double m = *std::max_element(e.begin(), e.end());
  double total = 0.0;
  for (double x : e) total += std::exp(x - m);
  std::vector<double> out(2 * D);
  for (std::size_t d = 0; d < D; ++d) {
    double mu = 0.0, m2 = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double a = std::exp(e[t] - m) / total;
      mu += a * h[t][d];
      m2 += a * h[t][d] * h[t][d];
    }
    out[d] = mu;
    out[D + d] = std::sqrt(std::max(m2 - mu * mu, kVarianceFloor));
  }
  return out;
}

Outcome asp_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> len(1, 5), dim(1, 3), hid(1, 4);
  double worst = 0.0;
  for (int i = 0; i < kAspInstances; ++i) {
    const std::size_t T = len(rng), D = dim(rng), H = hid(rng);
    const bool relu = i % 2 == 1;
    const auto h = gaussian_rows(T, D, rng), W = gaussian_rows(H, D, rng);
    const auto b = gaussian_rows(1, H, rng)[0], v = gaussian_rows(1, H, rng)[0];
    const double k = gaussian_rows(1, 1, rng)[0][0];
    AspParams p;
    p.W = from_rows(W);
    p.b = Tensor::vector(b);
    p.v = Tensor::vector(v);
    p.k = Tensor::scalar(k);
    p.activation = relu ? Activation::relu : Activation::tanh;
    worst = std::max(worst, max_abs_diff(asp_pool(from_rows(h), p), asp_direct(h, W, b, v, k, relu)));
  }
  double uniform_worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t T = len(rng), D = dim(rng);
    const auto h = gaussian_rows(T, D, rng);
    AspParams p;
    p.W = Tensor::zeros({2, D});
    p.b = Tensor::zeros({2});
    p.v = Tensor::zeros({2});
    p.k = Tensor::zeros({1});
    const Tensor pooled = asp_pool(from_rows(h), p);
    std::vector<double> mean(D, 0.0);
    for (const auto& row : h) {
      for (std::size_t d = 0; d < D; ++d) mean[d] += row[d] / static_cast<double>(T);
    }
    uniform_worst = std::max(uniform_worst, max_abs_diff(slice(pooled, 0, 0, D), mean));
    uniform_worst = std::max(uniform_worst, max_abs_diff(mean_pool(from_rows(h)), mean));
  }
  return {worst <= kIdentityTol && uniform_worst <= kIdentityTol,
          std::to_string(kAspInstances) + " instances max |Δ| " + sci(worst) + ", uniform vs mean " +
              sci(uniform_worst)};
}

Outcome mine_gaussian() {
  struct Case {
    double rho;
    double target;
    bool independent;
  };
  const std::vector<Case> cases{{0.8, gaussian_mi(0.8), false}, {0.5, gaussian_mi(0.5), false}, {0.0, 0.0, true}};
  bool pass = true;
  std::string detail;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const Case& c = cases[i];
    const GaussianPairs d = gaussian_pairs(kMinePairs, c.rho, 100 + i);
    MineFitOptions opt;
    opt.seed = 7 + i;
    const MineFitResult fit = fit_mine(d.x, d.z, opt);
    const bool ok = (c.independent ? fit.value <= kMineIndependentMax : std::abs(fit.value - c.target) <= kMineTol) &&
                    fit.seconds < kMineFitSeconds;
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += "rho " + fmt(c.rho, 1) + " -> " + fmt(fit.value) + " nats (target " +
              (c.independent ? "<= " + fmt(kMineIndependentMax, 2) : fmt(c.target) + " ± " + fmt(kMineTol, 2)) +
              ", " + fmt(fit.seconds, 1) + " s)";
  }
  return {pass, detail};
}

Outcome constant_statistic() {
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (double c : {0.0, 0.75, -3.0, 42.0, 250.0}) {
    StatisticsNet net = StatisticsNet::init(8, 16, rng);
    net.W3 = Tensor::zeros({1, 16});
    net.b3 = Tensor::scalar(c);
    const Tensor a = from_rows(gaussian_rows(32, 4, rng)), t = from_rows(gaussian_rows(32, 4, rng));
    worst = std::max(worst, std::abs(dv_lower_bound(a, t, net).value.item()));
    worst = std::max(worst,
                     std::abs(dv_lower_bound(a, t, net, NegativeSampling::permutation, &rng).value.item()));
  }
  return {worst <= kIdentityTol, "max |DV| " + sci(worst)};
}

Outcome fusion_identities() {
  std::mt19937_64 rng(12);
  double at_weights = 0.0, at_fused = 0.0, gmu = 0.0, mfb = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 2 + trial % 6;
    const Tensor a = Tensor::vector(gaussian_rows(1, d, rng)[0]);
    const Tensor t = Tensor::vector(gaussian_rows(1, d, rng)[0]);

    AtFusionParams at = AtFusionParams::init(d, 5, rng);
    at.w = Tensor::zeros({5});
    const AtFusionOutput out = at_fusion(a, t, at);
    at_weights = std::max(at_weights, max_abs_diff(out.weights, {0.5, 0.5}));
    std::vector<double> avg(d);
    for (std::size_t i = 0; i < d; ++i) avg[i] = (a[i] + t[i]) / 2.0;
    at_fused = std::max(at_fused, max_abs_diff(out.fused, avg));

    GmuParams g = GmuParams::init(d, rng);
    g.gate_weight = Tensor::zeros({d, 2 * d});
    g.gate_bias = Tensor::zeros({d});
    std::vector<double> expected(d);
    for (std::size_t i = 0; i < d; ++i) {
      double zt = g.text_bias[i], za = g.audio_bias[i];
      for (std::size_t j = 0; j < d; ++j) {
        zt += g.text_weight.at(i, j) * t[j];
        za += g.audio_weight.at(i, j) * a[j];
      }
      expected[i] = 0.5 * (std::tanh(zt) + std::tanh(za));
    }
    gmu = std::max(gmu, max_abs_diff(gmu_fusion(t, a, g), expected));

    const MfbParams m = MfbParams::init(d, 3, 2, rng);
    const Tensor zero = Tensor::zeros({d});
    const std::vector<double> zeros(d, 0.0);
    mfb = std::max({mfb, max_abs_diff(mfb_fusion(zero, t, m), zeros), max_abs_diff(mfb_fusion(a, zero, m), zeros),
                    max_abs_diff(mfh_fusion(zero, t, m), std::vector<double>(2 * d, 0.0))});
  }
  return {std::max({at_weights, at_fused, gmu, mfb}) <= kIdentityTol,
          "AT weights " + sci(at_weights) + ", AT mean " + sci(at_fused) + ", GMU " + sci(gmu) + ", MFB/MFH zero " +
              sci(mfb)};
}

double train_accuracy(const fs::path& root, const std::string& sep, std::string* detail) {
  const fs::path data = root / ("sep" + sep);
  if (cli({"gen-synth", "--sep", sep, "--n", "50", "--text-dim", "16", "--audio-dim", "16", "--out", data.string()}) != 0) {
    throw std::runtime_error("gen-synth failed");
  }
  const fs::path out = root / ("train" + sep);
  if (cli({"train", "--data", (data / "manifest.json").string(), "--out", out.string()}) != 0) {
    throw std::runtime_error("train failed");
  }
  const json r = read_json(out / "report.json");
  std::size_t ok = 0;
  for (const auto& run : r["per_run"]) ok += run["status"] == "ok";
  *detail += "sep " + sep + ": " + std::to_string(ok) + "/" + std::to_string(r["per_run"].size()) + " runs, acc " +
             fmt(r["aggregate"]["accuracy"]["mean"].get<double>(), 2) + " ± " +
             fmt(r["aggregate"]["accuracy"]["std"].get<double>(), 2) + "; ";
  if (ok != 5 || r["partial"].get<bool>()) return NAN;
  return r["aggregate"]["accuracy"]["mean"].get<double>();
}

Outcome end_to_end() {
  ScratchDir dir("e2e");
  const auto start = Clock::now();
  std::string detail;
  const double separated = train_accuracy(dir.path(), "4", &detail);
  const double chance = train_accuracy(dir.path(), "0", &detail);
  const double secs = seconds_since(start);
  detail += fmt(secs, 1) + " s";
  return {separated >= kSeparatedAccuracy && std::abs(chance - kChanceAccuracy) <= kChanceBand &&
              secs < kEndToEndSeconds,
          detail};
}

Outcome protocol() {
  std::vector<std::string> problems;
  EarlyStopper stopper(8);
  const std::vector<double> stream{1.0, 0.9, 0.95, 0.95, 0.95, 0.95, 0.95, 0.95, 0.95, 0.95};
  std::size_t stopped = 0;
  for (double loss : stream) {
    if (stopper.update(loss)) {
      stopped = stopper.epoch();
      break;
    }
  }
  if (stopped != 10 || stopper.best_epoch() != 2) {
    problems.push_back("stopped at " + std::to_string(stopped) + ", best " + std::to_string(stopper.best_epoch()));
  }
  const double lr0 = 1e-4;
  if (step_lr(lr0, 3, 4, 0.1) != lr0 || std::abs(step_lr(lr0, 4, 4, 0.1) - lr0 * 0.1) > 1e-20 ||
      std::abs(step_lr(lr0, 8, 4, 0.1) - lr0 * 0.01) > 1e-20) {
    problems.push_back("step_lr schedule");
  }
  ConfusionMatrix cm;
  cm.tp = 21;
  cm.fn = 3;
  cm.tn = 20;
  cm.fp = 4;
  const Metrics m = compute_metrics(cm);
  const std::vector<double> got{round2(m.precision), round2(m.recall), round2(m.f1), round2(m.accuracy),
                                round2(m.specificity)};
  const std::vector<double> want{84.00, 87.50, 85.71, 85.42, 83.33};
  if (got != want) problems.push_back("metrics");
  std::string detail = "stop epoch " + std::to_string(stopped) + " best " + std::to_string(stopper.best_epoch()) +
                       "; metrics";
  for (double v : got) detail += " " + fmt(v, 2);
  for (const auto& p : problems) detail += "; mismatch: " + p;
  return {problems.empty(), detail};
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  const auto na = a.named_parameters(), nb = b.named_parameters();
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    if (na[i].name != nb[i].name || values_of(na[i].tensor) != values_of(nb[i].tensor)) return false;
  }
  return true;
}

Outcome determinism() {
  ScratchDir dir("det");
  SyntheticSpec spec;
  spec.n_per_class = 20;
  spec.seed = 5;
  const fs::path manifest = gen_synthetic(spec, dir.path() / "data");
  const Dataset data = load_dataset(manifest);

  TrainConfig config;
  config.runs = 2;
  config.max_epochs = 5;
  const std::string first = report_json(multi_run(config, data)).dump();
  const std::string second = report_json(multi_run(config, data)).dump();
  const bool reports_equal = first == second;

  const SyntheticDataset synth = synthesize(spec);
  bool mmeb_exact = true;
  for (std::size_t i = 0; i < synth.records.size(); ++i) {
    const fs::path path = dir.path() / "data" / synth.manifest.utterances[i].file;
    const UtteranceRecord back = read_record(path);
    const UtteranceRecord& orig = synth.records[i];
    mmeb_exact = mmeb_exact && back.label == orig.label && back.text == orig.text &&
                 back.chunks.size() == orig.chunks.size() && encode_record(back) == encode_record(orig);
    for (std::size_t c = 0; mmeb_exact && c < orig.chunks.size(); ++c) {
      mmeb_exact = back.chunks[c].rows == orig.chunks[c].rows && back.chunks[c].values == orig.chunks[c].values;
    }
  }

  bool checkpoints_exact = true;
  for (FusionKind f : {FusionKind::at, FusionKind::concat, FusionKind::gmu, FusionKind::mfb, FusionKind::mfh}) {
    TrainConfig c;
    c.fusion = f;
    const ModelParams params = ModelParams::init(c.model_config(spec.text_dim, spec.audio_dim), 9);
    const fs::path path = dir.path() / "model.mmck";
    save_checkpoint(params, path);
    const ModelParams loaded = load_checkpoint(path, params.config);
    NoGradGuard guard;
    checkpoints_exact = checkpoints_exact && same_params(params, loaded) &&
                        values_of(forward_utterance(data.test.front(), params).logits) ==
                            values_of(forward_utterance(data.test.front(), loaded).logits);
  }
  return {reports_equal && mmeb_exact && checkpoints_exact,
          std::string("reports ") + (reports_equal ? "byte-identical" : "differ") + " (" +
              std::to_string(first.size()) + " bytes), MMEB " + (mmeb_exact ? "exact" : "mismatch") + " over " +
              std::to_string(synth.records.size()) + " records, checkpoints " +
              (checkpoints_exact ? "exact" : "mismatch") + " for 5 fusions"};
}

Outcome ablation() {
  ScratchDir dir("ablate");
  const fs::path data = dir.path() / "data";
  if (cli({"gen-synth", "--n", std::to_string(kAblationPerClass), "--out", data.string()}) != 0) {
    return {false, "gen-synth failed"};
  }
  const auto start = Clock::now();
  const std::vector<std::pair<std::string, std::size_t>> axes{{"pooling", 3}, {"fusion", 5}, {"lambda", 5}};
  bool pass = true;
  std::string detail;
  for (const auto& [axis, expected] : axes) {
    const int code = cli({"ablate", "--axis", axis, "--data", (data / "manifest.json").string(), "--out",
                          dir.path().string(), "--runs", std::to_string(kAblationRuns)});
    const json doc = read_json(dir.path() / ("ablation_" + axis + ".json"));
    std::size_t complete = 0, rows = doc["rows"].size();
    std::string names;
    for (const auto& row : doc["rows"]) {
      names += (names.empty() ? "" : ",") + row["variant"].get<std::string>();
      if (row["status"] != "ok") continue;
      bool all_ok = true;
      for (const auto& run : row["report"]["per_run"]) all_ok = all_ok && run["status"] == "ok";
      complete += all_ok && row["report"]["per_run"].size() == kAblationRuns;
    }
    pass = pass && code == 0 && rows == expected && complete == expected;
    detail += axis + " " + std::to_string(complete) + "/" + std::to_string(rows) + " rows [" + names + "]; ";
  }
  detail += std::to_string(kAblationRuns) + " runs per row, " + std::to_string(2 * kAblationPerClass) +
            " utterances, " + fmt(seconds_since(start), 1) + " s";
  return {pass, detail};
}

}  // namespace

int main() {
  report("gradient-suite", gradient_suite);
  report("asp-oracle", asp_oracle);
  report("mine-gaussian", mine_gaussian);
  report("constant-statistic", constant_statistic);
  report("fusion-identities", fusion_identities);
  report("end-to-end-synthetic", end_to_end);
  report("protocol-conformance", protocol);
  report("determinism-round-trip", determinism);
  report("ablation-harness", ablation);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
