#include "mmfuse/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmfuse/data_io.hpp"
#include "mmfuse/error.hpp"
#include "mmfuse/gradcheck.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/training.hpp"

namespace mmfuse::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(const std::exception& ex) {
  if (dynamic_cast<const CheckpointError*>(&ex)) return kCheckpointMismatch;
  if (dynamic_cast<const NumericError*>(&ex)) return kNumericError;
  if (dynamic_cast<const ConfigError*>(&ex)) return kConfigError;
  if (dynamic_cast<const DataError*>(&ex)) return kDataError;
  if (dynamic_cast<const DimensionError*>(&ex)) return kDataError;
  if (dynamic_cast<const InsufficientBatchError*>(&ex)) return kDataError;
  if (dynamic_cast<const json::exception*>(&ex)) return kConfigError;
  return kDataError;
}

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& ex) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + ex.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataErrc::io, "cannot write " + path.string());
  out << text;
  if (!out) throw DataError(DataErrc::io, "write failed for " + path.string());
}

std::string flag_name(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return "--" + key;
}

// Every TrainConfig key becomes an optional override flag; values stay
// strings until the key's JSON type is known.
class Overrides {
 public:
  void attach(CLI::App& cmd) {
    const json defaults = TrainConfig{}.to_json();
    for (const auto& [key, value] : defaults.items()) {
      values_[key];
      options_[key] = cmd.add_option(flag_name(key), values_[key], "override " + key);
    }
  }

  json collect() const {
    const json defaults = TrainConfig{}.to_json();
    json out = json::object();
    for (const auto& [key, option] : options_) {
      if (option->count() == 0) continue;
      const std::string& raw = values_.at(key);
      const json& like = defaults.at(key);
      try {
        std::size_t used = 0;
        if (like.is_number_unsigned() || like.is_number_integer()) {
          if (!raw.empty() && raw.front() == '-') throw std::invalid_argument(raw);
          out[key] = std::stoull(raw, &used);
        } else if (like.is_number_float()) {
          out[key] = std::stod(raw, &used);
        } else {
          out[key] = raw;
          used = raw.size();
        }
        if (used != raw.size()) throw std::invalid_argument(raw);
      } catch (const std::logic_error&) {
        throw ConfigError("invalid value '" + raw + "' for " + flag_name(key));
      }
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> options_;
};

struct CommonArgs {
  std::string config;
  std::string data;
  std::string out;
  Overrides overrides;
};

// Config file (TrainConfig keys plus optional "data" and "out"), then flags.
TrainConfig resolve_config(CommonArgs& args, bool need_data = true) {
  TrainConfig config;
  if (!args.config.empty()) {
    json file = read_json(args.config);
    if (!file.is_object()) throw ConfigError("config must be a JSON object");
    if (file.contains("data")) {
      if (args.data.empty()) args.data = file["data"].get<std::string>();
      file.erase("data");
    }
    if (file.contains("out")) {
      if (args.out.empty()) args.out = file["out"].get<std::string>();
      file.erase("out");
    }
    config = TrainConfig::from_json(file);
  }
  config = TrainConfig::from_json(args.overrides.collect(), config);
  config.validate();
  if (need_data && args.data.empty()) throw ConfigError("no dataset given (--data or \"data\" in the config)");
  return config;
}

Dataset load_and_report(const std::string& manifest, std::ostream& err) {
  Dataset data = load_dataset(manifest);
  for (const auto& w : data.warnings) err << "warning: " << w << '\n';
  return data;
}

std::string format_cell(const MetricSummary& s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", round2(s.mean), round2(s.std));
  return buf;
}

std::string format_percent(double v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", round2(v));
  return buf;
}

// Display width, counting each UTF-8 code point once.
std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

void print_table(std::ostream& out, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], display_width(row[c]));
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      out << (c ? "  " : "") << rows[r][c];
      if (c + 1 < rows[r].size()) out << std::string(width[c] - display_width(rows[r][c]), ' ');
    }
    out << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
}

const std::vector<std::string> kMetricHeader = {"Precision", "Recall", "F1", "Accuracy", "Specificity"};

std::vector<std::string> summary_cells(const RunReport& report) {
  return {format_cell(report.precision), format_cell(report.recall), format_cell(report.f1),
          format_cell(report.accuracy), format_cell(report.specificity)};
}

int run_status(const RunReport& report) {
  bool any_ok = false;
  for (const auto& run : report.runs) {
    if (run.numeric_failure) return kNumericError;
    any_ok = any_ok || run.ok;
  }
  return any_ok ? kOk : kDataError;
}

json sidecar_json(const TrainConfig& config, const ModelConfig& model, std::uint64_t seed) {
  return {{"seed", seed},
          {"train_config", config.to_json()},
          {"model_config", model.to_json()},
          {"config_digest", hex_digest(model.digest())}};
}

int cmd_train(CommonArgs& args, std::ostream& out, std::ostream& err, bool verbose) {
  const TrainConfig config = resolve_config(args);
  if (args.out.empty()) throw ConfigError("no output directory given (--out or \"out\" in the config)");
  const Dataset data = load_and_report(args.data, err);

  TrainOptions options;
  if (verbose) options.log = &err;
  const RunReport report = multi_run(config, data, options);

  const fs::path dir(args.out);
  fs::create_directories(dir);
  write_text(dir / "report.json", report_json(report).dump(2) + "\n");
  const ModelConfig model = config.model_config(data.manifest.text_dim, data.manifest.audio_dim);
  for (std::size_t r = 0; r < report.runs.size(); ++r) {
    const RunResult& run = report.runs[r];
    if (!run.ok) {
      err << "run " << r << " (seed " << run.seed << ") failed: " << run.error << '\n';
      continue;
    }
    const std::string stem = "run_" + std::to_string(r);
    save_checkpoint(*run.params, dir / (stem + ".mmck"));
    write_text(dir / (stem + ".json"), sidecar_json(config, model, run.seed).dump(2) + "\n");
  }

  std::vector<std::vector<std::string>> rows{{"Run", "Seed", "Epochs", "Best", "Eval"}};
  rows[0].insert(rows[0].end(), kMetricHeader.begin(), kMetricHeader.end());
  for (std::size_t r = 0; r < report.runs.size(); ++r) {
    const RunResult& run = report.runs[r];
    std::vector<std::string> row{std::to_string(r), std::to_string(run.seed)};
    if (!run.ok) {
      row.insert(row.end(), {"-", "-", "failed"});
    } else {
      const Metrics& m = run.test_metrics;
      row.insert(row.end(), {std::to_string(run.epochs), std::to_string(run.best_epoch), run.evaluated_on,
                             format_percent(m.precision), format_percent(m.recall), format_percent(m.f1),
                             format_percent(m.accuracy), format_percent(m.specificity)});
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::string> mean_row{"mean", "", "", "", ""};
  for (auto& cell : summary_cells(report)) mean_row.push_back(cell);
  rows.push_back(std::move(mean_row));
  print_table(out, rows);
  out << "report: " << (dir / "report.json").string() << '\n';
  return run_status(report);
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest, const std::string& split_name,
             std::string sidecar_path, std::ostream& out, std::ostream& err) {
  const EvalSplit split = parse_eval_split(split_name);
  if (sidecar_path.empty()) sidecar_path = fs::path(checkpoint).replace_extension(".json").string();
  const json sidecar = read_json(sidecar_path);
  TrainConfig config;
  ModelConfig model;
  std::uint64_t seed = 0;
  try {
    config = TrainConfig::from_json(sidecar.at("train_config"));
    model = ModelConfig::from_json(sidecar.at("model_config"));
    seed = sidecar.at("seed").get<std::uint64_t>();
  } catch (const json::exception& ex) {
    throw ConfigError("malformed checkpoint sidecar " + sidecar_path + ": " + ex.what());
  }

  const Dataset data = load_and_report(manifest, err);
  if (data.manifest.text_dim != model.text_dim || data.manifest.audio_dim != model.audio_dim) {
    throw DataError(DataErrc::dim_mismatch,
                    "dataset dims (d_t=" + std::to_string(data.manifest.text_dim) +
                        ", d_a=" + std::to_string(data.manifest.audio_dim) + ") do not match the checkpoint (d_t=" +
                        std::to_string(model.text_dim) + ", d_a=" + std::to_string(model.audio_dim) + ")");
  }
  const ModelParams params = load_checkpoint(checkpoint, model);
  const std::vector<UtteranceRecord> records = select_split(data, config, seed, split);
  if (records.empty()) throw DataError(DataErrc::invalid_record, "split '" + split_name + "' has no labelled records");
  const Metrics metrics = compute_metrics(evaluate(params, records));
  for (const auto& w : metrics.warnings) err << "warning: " << w << '\n';
  json report = metrics_json(metrics);
  report["split"] = split_name;
  report["records"] = records.size();
  out << report.dump(2) << '\n';
  return kOk;
}

std::string lambda_label(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

struct Variant {
  std::string name;
  TrainConfig config;
  std::string manifest;
};

int cmd_ablate(CommonArgs& args, const std::string& axis, const std::vector<std::string>& variant_specs,
               std::ostream& out, std::ostream& err, bool verbose) {
  std::vector<Variant> variants;
  const TrainConfig base = resolve_config(args, axis != "layers-meta");
  if (axis == "pooling") {
    for (PoolingKind p : {PoolingKind::asp, PoolingKind::mean, PoolingKind::max}) {
      TrainConfig c = base;
      c.pooling = p;
      variants.push_back({to_string(p), c, args.data});
    }
  } else if (axis == "fusion") {
    for (FusionKind f : {FusionKind::at, FusionKind::concat, FusionKind::gmu, FusionKind::mfb, FusionKind::mfh}) {
      TrainConfig c = base;
      c.fusion = f;
      variants.push_back({to_string(f), c, args.data});
    }
  } else if (axis == "lambda") {
    for (double l : {0.0, 0.1, 0.2, 0.25, 0.3}) {
      TrainConfig c = base;
      c.lambda_mi = l;
      variants.push_back({lambda_label(l), c, args.data});
    }
  } else if (axis == "layers-meta") {
    if (variant_specs.empty()) throw ConfigError("layers-meta needs one --variant name=manifest per layer setting");
    for (const std::string& spec : variant_specs) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
        throw ConfigError("--variant expects name=manifest, got '" + spec + "'");
      }
      variants.push_back({spec.substr(0, eq), base, spec.substr(eq + 1)});
    }
  } else {
    throw ConfigError("unknown axis '" + axis + "' (expected pooling, fusion, lambda or layers-meta)");
  }

  TrainOptions options;
  if (verbose) options.log = &err;
  std::vector<std::vector<std::string>> rows{{axis == "lambda" ? "λ" : axis == "layers-meta" ? "Layers" : "Variant"}};
  rows[0].insert(rows[0].end(), kMetricHeader.begin(), kMetricHeader.end());
  json results = json::array();
  std::size_t completed = 0;
  int first_failure = kOk;
  for (const Variant& v : variants) {
    std::vector<std::string> row{v.name};
    json entry = {{"variant", v.name}};
    try {
      const Dataset data = load_and_report(v.manifest, err);
      const RunReport report = multi_run(v.config, data, options);
      const int status = run_status(report);
      if (status != kOk) throw NumericError("no run of variant " + v.name + " completed");
      entry["status"] = report.partial ? "partial" : "ok";
      entry["report"] = report_json(report);
      for (auto& cell : summary_cells(report)) row.push_back(cell);
      if (report.partial) row.back() += " (partial)";
      ++completed;
    } catch (const std::exception& ex) {
      err << "variant " << v.name << " failed: " << ex.what() << '\n';
      if (first_failure == kOk) first_failure = exit_code_for(ex);
      entry["status"] = "failed";
      entry["error"] = ex.what();
      row.push_back("failed");
    }
    results.push_back(std::move(entry));
    rows.push_back(std::move(row));
  }
  print_table(out, rows);
  if (!args.out.empty()) {
    const json doc = {{"axis", axis}, {"config", base.to_json()}, {"rows", results}};
    const fs::path path = fs::path(args.out) / ("ablation_" + axis + ".json");
    write_text(path, doc.dump(2) + "\n");
    out << "results: " << path.string() << '\n';
  }
  return completed > 0 ? kOk : first_failure;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t points, const std::string& fault, std::ostream& out) {
  const std::vector<GradcheckGroup> groups = run_gradcheck_suite(seed, points, fault);
  std::vector<std::vector<std::string>> rows{{"Group", "Max rel. error", "Checked", "Skipped", "Result"}};
  std::vector<std::string> failed;
  for (const auto& g : groups) {
    std::ostringstream err_cell;
    err_cell << std::scientific << std::setprecision(2) << g.max_rel_error;
    rows.push_back({g.name, g.error.empty() ? err_cell.str() : "error: " + g.error, std::to_string(g.checked),
                    std::to_string(g.skipped), g.passed ? "PASS" : "FAIL"});
    if (!g.passed) failed.push_back(g.name);
  }
  print_table(out, rows);
  if (failed.empty()) {
    out << "all " << groups.size() << " groups passed (tolerance " << kGradcheckTolerance << ")\n";
    return kOk;
  }
  out << "FAILED:";
  for (const auto& name : failed) out << ' ' << name;
  out << '\n';
  return kVerificationFailure;
}

int cmd_gen_synth(const SyntheticSpec& spec, const std::string& dir, std::ostream& out) {
  spec.validate();
  out << gen_synthetic(spec, dir).string() << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal audio/text classification toolkit with attention fusion and MI regularisation",
               "mmfuse"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "per-epoch progress on stderr");

  CommonArgs train_args;
  auto* train = app.add_subcommand("train", "train with the multi-run protocol and write a report");
  train->add_option("--config", train_args.config, "JSON config (TrainConfig keys, optional data/out)");
  train->add_option("--data", train_args.data, "dataset manifest");
  train->add_option("--out", train_args.out, "output directory");
  train_args.overrides.attach(*train);

  std::string ckpt, eval_data, split = "test", sidecar;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  eval->add_option("--checkpoint", ckpt, "checkpoint file (.mmck)")->required();
  eval->add_option("--data", eval_data, "dataset manifest")->required();
  eval->add_option("--split", split, "train, val or test")->capture_default_str();
  eval->add_option("--config", sidecar, "checkpoint sidecar JSON (default: checkpoint path with .json)");

  CommonArgs ablate_args;
  std::string axis;
  std::vector<std::string> variants;
  auto* ablate = app.add_subcommand("ablate", "multi-run sweep along one axis");
  ablate->add_option("--axis", axis, "pooling, fusion, lambda or layers-meta")->required();
  ablate->add_option("--config", ablate_args.config, "JSON config");
  ablate->add_option("--data", ablate_args.data, "dataset manifest");
  ablate->add_option("--out", ablate_args.out, "directory for the JSON results");
  ablate->add_option("--variant", variants, "layers-meta row as name=manifest (repeatable)");
  ablate_args.overrides.attach(*ablate);

  std::uint64_t gc_seed = 0;
  std::size_t gc_points = 10;
  std::string fault;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  gc->add_option("--seed", gc_seed)->capture_default_str();
  gc->add_option("--points", gc_points, "random points per group")->capture_default_str();
  gc->add_option("--inject-fault", fault, "flip the backward rule of this op")->group("");

  SyntheticSpec synth;
  std::string synth_out;
  auto* gen = app.add_subcommand("gen-synth", "write a synthetic two-class dataset");
  gen->add_option("--n", synth.n_per_class, "records per class")->capture_default_str();
  gen->add_option("--sep", synth.separation, "class separation")->capture_default_str();
  gen->add_option("--seed", synth.seed)->capture_default_str();
  gen->add_option("--out", synth_out, "output directory")->required();
  gen->add_option("--text-dim", synth.text_dim)->capture_default_str();
  gen->add_option("--audio-dim", synth.audio_dim)->capture_default_str();
  gen->add_option("--noise", synth.noise)->capture_default_str();
  gen->add_option("--test-fraction", synth.test_fraction)->capture_default_str();
  gen->add_option("--min-chunks", synth.min_chunks)->capture_default_str();
  gen->add_option("--max-chunks", synth.max_chunks)->capture_default_str();
  gen->add_option("--min-frames", synth.min_frames)->capture_default_str();
  gen->add_option("--max-frames", synth.max_frames)->capture_default_str();

  std::vector<std::string> argv_store{"mmfuse"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*train) return cmd_train(train_args, out, err, verbose);
    if (*eval) return cmd_eval(ckpt, eval_data, split, sidecar, out, err);
    if (*ablate) return cmd_ablate(ablate_args, axis, variants, out, err, verbose);
    if (*gc) return cmd_gradcheck(gc_seed, gc_points, fault, out);
    if (*gen) return cmd_gen_synth(synth, synth_out, out);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return exit_code_for(ex);
  }
  return kConfigError;
}

}  // namespace mmfuse::cli
