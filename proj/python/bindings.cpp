#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mmfuse/cli.hpp"
#include "mmfuse/data_io.hpp"
#include "mmfuse/error.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/gradcheck.hpp"
#include "mmfuse/mine.hpp"
#include "mmfuse/mine_fit.hpp"
#include "mmfuse/pooling.hpp"
#include "mmfuse/training.hpp"

namespace py = pybind11;
using namespace mmfuse;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  if (shape.empty()) shape = {1};
  return Tensor::from(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const Tensor& t) {
  py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

std::vector<Tensor> to_tensors(const std::vector<Array>& arrays) {
  std::vector<Tensor> out;
  for (const auto& a : arrays) out.push_back(to_tensor(a));
  return out;
}

AspParams asp_params(const Array& W, const Array& b, const Array& v, double k, const std::string& activation) {
  AspParams p;
  p.W = to_tensor(W);
  p.b = to_tensor(b);
  p.v = to_tensor(v);
  p.k = Tensor::scalar(k);
  if (activation == "tanh") {
    p.activation = Activation::tanh;
  } else if (activation == "relu") {
    p.activation = Activation::relu;
  } else {
    throw ConfigError("activation must be tanh or relu, got '" + activation + "'");
  }
  return p;
}

MfbParams mfb_params(const std::vector<Array>& U, const std::vector<Array>& V, std::size_t factor) {
  MfbParams p;
  p.U = to_tensors(U);
  p.V = to_tensors(V);
  p.factor = factor;
  return p;
}

py::dict record_dict(const UtteranceRecord& r) {
  py::dict d;
  d["id"] = r.id;
  d["label"] = r.label;
  FloatArray text(static_cast<py::ssize_t>(r.text.size()));
  std::copy(r.text.begin(), r.text.end(), text.mutable_data());
  d["text"] = text;
  py::list chunks;
  for (const FrameMatrix& c : r.chunks) {
    FloatArray m({static_cast<py::ssize_t>(c.rows), static_cast<py::ssize_t>(c.cols)});
    std::copy(c.values.begin(), c.values.end(), m.mutable_data());
    chunks.append(m);
  }
  d["chunks"] = chunks;
  return d;
}

UtteranceRecord record_from(const std::string& id, int label, const FloatArray& text,
                            const std::vector<FloatArray>& chunks) {
  UtteranceRecord r;
  r.id = id;
  r.label = label;
  r.text.assign(text.data(), text.data() + text.size());
  for (const auto& c : chunks) {
    if (c.ndim() != 2) throw DimensionError("chunks must be 2-d (frames × audio_dim)");
    FrameMatrix m{static_cast<std::size_t>(c.shape(0)), static_cast<std::size_t>(c.shape(1)), {}};
    m.values.assign(c.data(), c.data() + c.size());
    r.chunks.push_back(std::move(m));
  }
  return r;
}

}  // namespace

PYBIND11_MODULE(_mmfuse, m) {
  m.doc() = "Multimodal fusion toolkit core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);
  py::register_exception<InsufficientBatchError>(m, "InsufficientBatchError", PyExc_ValueError);

  m.def(
      "asp_pool",
      [](const Array& frames, const Array& W, const Array& b, const Array& v, double k, const std::string& act) {
        return to_array(asp_pool(to_tensor(frames), asp_params(W, b, v, k, act)));
      },
      py::arg("frames"), py::arg("W"), py::arg("b"), py::arg("v"), py::arg("k") = 0.0,
      py::arg("activation") = "tanh", "Attentive statistics pooling of a T × D frame matrix; returns [mu ; sigma].");
  m.def(
      "asp_scores",
      [](const Array& frames, const Array& W, const Array& b, const Array& v, double k, const std::string& act) {
        return to_array(asp_scores(to_tensor(frames), asp_params(W, b, v, k, act)));
      },
      py::arg("frames"), py::arg("W"), py::arg("b"), py::arg("v"), py::arg("k") = 0.0,
      py::arg("activation") = "tanh");
  m.def("mean_pool", [](const Array& frames) { return to_array(mean_pool(to_tensor(frames))); });
  m.def("max_pool", [](const Array& frames) { return to_array(max_pool(to_tensor(frames))); });
  m.def("utterance_aggregate", [](const std::vector<Array>& chunks) {
    const std::vector<Tensor> t = to_tensors(chunks);
    return to_array(utterance_aggregate(t));
  });

  m.def(
      "at_fusion",
      [](const Array& audio, const Array& text, const Array& W, const Array& w) {
        AtFusionParams p{to_tensor(W), to_tensor(w)};
        AtFusionOutput out = at_fusion(to_tensor(audio), to_tensor(text), p);
        return py::make_tuple(to_array(out.fused), to_array(out.weights));
      },
      py::arg("audio"), py::arg("text"), py::arg("W"), py::arg("w"), "Returns (fused, [alpha_audio, alpha_text]).");
  m.def("concat_fusion", [](const Array& audio, const Array& text) {
    return to_array(concat_fusion(to_tensor(audio), to_tensor(text)));
  });
  m.def(
      "gmu_fusion",
      [](const Array& text, const Array& audio, const Array& Wt, const Array& bt, const Array& Wa, const Array& ba,
         const Array& Wz, const Array& bz) {
        GmuParams p{to_tensor(Wt), to_tensor(bt), to_tensor(Wa), to_tensor(ba), to_tensor(Wz), to_tensor(bz)};
        return to_array(gmu_fusion(to_tensor(text), to_tensor(audio), p));
      },
      py::arg("text"), py::arg("audio"), py::arg("text_weight"), py::arg("text_bias"), py::arg("audio_weight"),
      py::arg("audio_bias"), py::arg("gate_weight"), py::arg("gate_bias"));
  m.def(
      "mfb_fusion",
      [](const Array& audio, const Array& text, const std::vector<Array>& U, const std::vector<Array>& V,
         std::size_t factor) {
        return to_array(mfb_fusion(to_tensor(audio), to_tensor(text), mfb_params(U, V, factor)));
      },
      py::arg("audio"), py::arg("text"), py::arg("U"), py::arg("V"), py::arg("factor"),
      "Uses the first block of U and V.");
  m.def(
      "mfh_fusion",
      [](const Array& audio, const Array& text, const std::vector<Array>& U, const std::vector<Array>& V,
         std::size_t factor) {
        return to_array(mfh_fusion(to_tensor(audio), to_tensor(text), mfb_params(U, V, factor)));
      },
      py::arg("audio"), py::arg("text"), py::arg("U"), py::arg("V"), py::arg("factor"));

  m.def(
      "dv_lower_bound",
      [](const Array& audio, const Array& text, const std::vector<Array>& net_params) {
        if (net_params.size() != 6) throw ConfigError("expected [W1, b1, W2, b2, W3, b3]");
        const std::vector<Tensor> t = to_tensors(net_params);
        StatisticsNet net{t[0], t[1], t[2], t[3], t[4], t[5]};
        MiBatchEstimate est = dv_lower_bound(to_tensor(audio), to_tensor(text), net);
        py::dict d;
        d["joint"] = est.joint_term.item();
        d["marginal"] = est.marginal_term.item();
        d["value"] = est.value.item();
        return d;
      },
      py::arg("audio"), py::arg("text"), py::arg("net_params"),
      "Donsker-Varadhan bound for B × d_a audio and B × d_t text rows with shift negatives.");
  m.def("gaussian_mi", &gaussian_mi, py::arg("rho"));
  m.def(
      "gaussian_pairs",
      [](std::size_t n, double rho, std::uint64_t seed) {
        GaussianPairs p = gaussian_pairs(n, rho, seed);
        return py::make_tuple(to_array(p.x), to_array(p.z));
      },
      py::arg("n"), py::arg("rho"), py::arg("seed") = 0);
  m.def(
      "fit_mine",
      [](const Array& x, const Array& z, std::size_t hidden, std::size_t steps, std::size_t batch_size, double lr,
         std::uint64_t seed) {
        MineFitOptions opt{hidden, steps, batch_size, lr, seed};
        py::gil_scoped_release release;
        return fit_mine(to_tensor(x), to_tensor(z), opt).value;
      },
      py::arg("x"), py::arg("z"), py::arg("hidden") = 128, py::arg("steps") = 2000, py::arg("batch_size") = 256,
      py::arg("lr") = 1e-3, py::arg("seed") = 0, "Trains a statistics network and returns the DV estimate in nats.");

  m.def(
      "compute_metrics",
      [](std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
        return metrics_json(compute_metrics({tp, fp, tn, fn})).dump();
      },
      py::arg("tp"), py::arg("fp"), py::arg("tn"), py::arg("fn"));
  m.def("step_lr", &step_lr, py::arg("lr0"), py::arg("epoch"), py::arg("step_size") = 4, py::arg("gamma") = 0.1);

  m.def("read_record", [](const std::filesystem::path& path) { return record_dict(read_record(path)); });
  m.def(
      "write_record",
      [](const std::filesystem::path& path, int label, const FloatArray& text, const std::vector<FloatArray>& chunks) {
        write_record(record_from(path.stem().string(), label, text, chunks), path);
      },
      py::arg("path"), py::arg("label"), py::arg("text"), py::arg("chunks"));
  m.def(
      "encode_record",
      [](int label, const FloatArray& text, const std::vector<FloatArray>& chunks) {
        const auto bytes = encode_record(record_from("", label, text, chunks));
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      py::arg("label"), py::arg("text"), py::arg("chunks"));
  m.def(
      "load_dataset",
      [](const std::filesystem::path& manifest) {
        const Dataset d = load_dataset(manifest);
        py::list train, test;
        for (const auto& r : d.train) train.append(record_dict(r));
        for (const auto& r : d.test) test.append(record_dict(r));
        py::dict out;
        out["train"] = train;
        out["test"] = test;
        out["warnings"] = d.warnings;
        return out;
      },
      py::arg("manifest"));
  m.def(
      "gen_synthetic",
      [](const std::filesystem::path& out_dir, std::size_t n_per_class, double separation, std::uint64_t seed,
         std::size_t text_dim, std::size_t audio_dim) {
        SyntheticSpec spec;
        spec.n_per_class = n_per_class;
        spec.separation = separation;
        spec.seed = seed;
        spec.text_dim = text_dim;
        spec.audio_dim = audio_dim;
        spec.validate();
        return gen_synthetic(spec, out_dir);
      },
      py::arg("out_dir"), py::arg("n_per_class") = 50, py::arg("separation") = 4.0, py::arg("seed") = 0,
      py::arg("text_dim") = 16, py::arg("audio_dim") = 16, "Writes a synthetic dataset; returns the manifest path.");

  m.def(
      "train_report",
      [](const std::filesystem::path& manifest, const std::string& config_json) {
        const TrainConfig config = TrainConfig::from_json(nlohmann::json::parse(config_json));
        config.validate();
        const Dataset data = load_dataset(manifest);
        py::gil_scoped_release release;
        return report_json(multi_run(config, data)).dump();
      },
      py::arg("manifest"), py::arg("config_json") = "{}", "Multi-run training; returns the report as JSON text.");
  m.def("default_config", [] { return TrainConfig{}.to_json().dump(); });

  m.def(
      "gradcheck_suite",
      [](std::uint64_t seed, std::size_t points) {
        py::list out;
        for (const GradcheckGroup& g : run_gradcheck_suite(seed, points)) {
          py::dict d;
          d["name"] = g.name;
          d["max_rel_error"] = g.max_rel_error;
          d["checked"] = g.checked;
          d["skipped"] = g.skipped;
          d["passed"] = g.passed;
          d["error"] = g.error;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0, py::arg("points") = 10);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one command-line invocation; returns (exit_code, stdout, stderr).");
}
