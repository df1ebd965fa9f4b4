#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <sstream>

#include "normlab/config.hpp"
#include "normlab/csv.hpp"
#include "normlab/diagnostics.hpp"
#include "normlab/errors.hpp"
#include "normlab/harness.hpp"
#include "normlab/lanczos.hpp"
#include "normlab/trainer.hpp"

namespace py = pybind11;
using namespace normlab;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const DoubleArray& arr) {
    Shape shape(static_cast<std::size_t>(arr.ndim()));
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
        shape[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arr.shape(i));
    }
    Tensor t(std::move(shape));
    std::copy(arr.data(), arr.data() + arr.size(), t.vec().begin());
    return t;
}

py::array_t<double> array_from(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> arr(shape);
    std::copy(t.data().begin(), t.data().end(), arr.mutable_data());
    return arr;
}

std::vector<std::size_t> labels_from(const std::vector<std::int64_t>& y) {
    std::vector<std::size_t> out;
    out.reserve(y.size());
    for (std::int64_t v : y) {
        if (v < 0) throw DataError("labels must be non-negative");
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

ModelConfig model_config(const std::string& arch, std::size_t depth, std::size_t width,
                         bool skip, const std::string& activation, const std::string& norm,
                         std::size_t classes, const std::vector<std::size_t>& input,
                         double eps, double momentum, std::uint64_t seed) {
    ModelConfig mc;
    mc.arch = parse_model_arch(arch);
    mc.depth = depth;
    mc.width = width;
    mc.skip = skip;
    mc.activation = parse_activation(activation);
    mc.norm = parse_norm_kind(norm);
    mc.classes = classes;
    mc.input = input;
    mc.norm_opts.eps = eps;
    mc.norm_opts.momentum = momentum;
    mc.seed = seed;
    return mc;
}

py::array_t<double> normalize_array(const DoubleArray& arr, const std::string& kind_name,
                                    double eps) {
    const NormKind kind = parse_norm_kind(kind_name);
    Tape tape;
    Var z = tape.leaf(tensor_from(arr));
    const std::size_t rank = z.shape().size();
    const NormOptions opts{eps, 0.9};
    Var out = z;
    switch (kind) {
        case NormKind::none:
            break;
        case NormKind::batch:
        case NormKind::batch_train:
            out = moment_normalize(z, batch_axes(rank), batch_axes(rank), eps);
            break;
        case NormKind::layer:
            out = layer_norm(z, opts);
            break;
        case NormKind::weight:
            out = weight_norm(z);
            break;
        case NormKind::bmlv:
            out = moment_normalize(z, batch_axes(rank), feature_axes(rank), eps);
            break;
        case NormKind::lmbv:
            out = moment_normalize(z, feature_axes(rank), batch_axes(rank), eps);
            break;
        case NormKind::prelayernorm:
            out = scale_by_std(z, feature_axes(rank), eps);
            break;
        case NormKind::regnorm:
        case NormKind::preregnorm:
            out = rms_normalize(z, opts);
            break;
    }
    return array_from(out.value());
}

double rms_penalty_value(const DoubleArray& arr, double eps) {
    Tape tape;
    Var z = tape.leaf(tensor_from(arr));
    Var zbar = rms_normalize(z, NormOptions{eps, 0.9});
    return reg_norm_penalty(zbar).value()[0];
}

py::dict spectrum_dict(const SpectrumEstimate& s) {
    py::dict d;
    d["ritz_values"] = s.ritz_values;
    d["weights"] = s.weights;
    d["order"] = s.order;
    d["num_probes"] = s.num_probes;
    d["truncated"] = s.truncated;
    return d;
}

py::dict lanczos_dense(const DoubleArray& matrix, std::size_t order, std::size_t probes,
                       std::uint64_t seed) {
    if (matrix.ndim() != 2 || matrix.shape(0) != matrix.shape(1)) {
        throw ParamError("lanczos expects a square matrix");
    }
    const std::size_t n = static_cast<std::size_t>(matrix.shape(0));
    const Tensor a = tensor_from(matrix);
    const LinearOp op = [&](const std::vector<double>& v) {
        std::vector<double> out(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += a[i * n + j] * v[j];
            out[i] = acc;
        }
        return out;
    };
    return spectrum_dict(lanczos_spectrum(op, n, order == 0 ? n : order, probes, Rng(seed)));
}

py::dict dataset_dict(const Dataset& d) {
    py::dict out;
    out["id"] = d.id;
    out["train_x"] = array_from(d.train_x);
    out["train_y"] = d.train_y;
    out["test_x"] = array_from(d.test_x);
    out["test_y"] = d.test_y;
    out["classes"] = d.classes;
    return out;
}

py::list rows_to_list(const std::vector<MetricRow>& rows) {
    py::list out;
    for (const MetricRow& r : rows) {
        py::dict d;
        d["experiment"] = r.experiment;
        d["normalizer"] = r.normalizer;
        d["step"] = r.step;
        d["layer"] = r.layer;
        d["metric"] = r.metric;
        d["value"] = r.value;
        d["seed"] = r.seed;
        d["fingerprint"] = r.fingerprint;
        out.append(d);
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "normalization-scheme laboratory core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<Error>(m, "NormlabError", PyExc_RuntimeError);

    py::class_<Model>(m, "Model")
        .def(py::init([](const std::string& arch, std::size_t depth, std::size_t width,
                         bool skip, const std::string& activation, const std::string& norm,
                         std::size_t classes, const std::vector<std::size_t>& input,
                         double eps, double momentum, std::uint64_t seed) {
                 return Model(model_config(arch, depth, width, skip, activation, norm,
                                           classes, input, eps, momentum, seed));
             }),
             py::arg("arch") = "mlp", py::arg("depth") = 4, py::arg("width") = 64,
             py::arg("skip") = false, py::arg("activation") = "relu",
             py::arg("norm") = "none", py::arg("classes") = 10,
             py::arg("input") = std::vector<std::size_t>{16}, py::arg("eps") = 1e-5,
             py::arg("momentum") = 0.9, py::arg("seed") = 0)
        .def_property_readonly("param_count", &Model::param_count)
        .def_property_readonly("depth", &Model::depth)
        .def("state_hash", &Model::state_hash)
        .def("logits",
             [](Model& model, const DoubleArray& x, const std::string& mode) {
                 Tape tape;
                 auto res = model.forward(tape, tensor_from(x), parse_norm_mode(mode));
                 return array_from(res.logits.value());
             },
             py::arg("x"), py::arg("mode") = "batch_train")
        .def("layer_outputs",
             [](Model& model, const DoubleArray& x, const std::string& mode) {
                 Tape tape;
                 auto res = model.forward(tape, tensor_from(x), parse_norm_mode(mode), true);
                 py::list out;
                 for (const auto& cap : res.captures) out.append(array_from(cap.post.value()));
                 return out;
             },
             py::arg("x"), py::arg("mode") = "batch_train")
        .def("params",
             [](const Model& model) {
                 py::dict out;
                 for (const Param& p : model.params()) out[p.name.c_str()] = array_from(p.value);
                 return out;
             })
        .def("sgd_step",
             [](Model& model, const DoubleArray& x, const std::vector<std::int64_t>& y,
                double lr, double lambda_reg) {
                 const StepResult r =
                     sgd_step(model, tensor_from(x), labels_from(y), lr, lambda_reg);
                 return py::make_tuple(r.loss, r.diverged);
             },
             py::arg("x"), py::arg("y"), py::arg("lr"), py::arg("lambda_reg") = 0.0)
        .def("evaluate",
             [](Model& model, const DoubleArray& x, const std::vector<std::int64_t>& y,
                std::size_t batch_size, const std::string& mode) {
                 const EvalResult r = evaluate(model, tensor_from(x), labels_from(y),
                                               batch_size, parse_norm_mode(mode));
                 return py::make_tuple(r.accuracy, r.loss);
             },
             py::arg("x"), py::arg("y"), py::arg("batch_size") = 256,
             py::arg("mode") = "eval")
        .def("info_prop",
             [](Model& model, const DoubleArray& x, double sigma, bool relative,
                std::uint64_t seed, const std::string& mode) {
                 const DepthTrace t = info_prop_correlation(
                     model, tensor_from(x), NoiseSpec{sigma, relative},
                     parse_norm_mode(mode), Rng(seed));
                 std::vector<double> vals;
                 for (const Flagged& f : t.values) vals.push_back(f.value);
                 return vals;
             },
             py::arg("x"), py::arg("sigma") = 0.01, py::arg("relative") = true,
             py::arg("seed") = 0, py::arg("mode") = "batch_train")
        .def("gradient_norms",
             [](Model& model, const DoubleArray& x, const std::vector<std::int64_t>& y,
                const std::string& mode) {
                 const GradNormProfile p = gradient_norm_profile(
                     model, tensor_from(x), labels_from(y), parse_norm_mode(mode));
                 std::vector<double> vals;
                 for (const Flagged& f : p.trace.values) vals.push_back(f.value);
                 return py::make_tuple(vals, p.ratio.value);
             },
             py::arg("x"), py::arg("y"), py::arg("mode") = "batch_train");

    m.def("normalize", &normalize_array, py::arg("x"), py::arg("kind"),
          py::arg("eps") = 1e-5,
          "Apply a normalization scheme's statistic transform (current-batch mode)");
    m.def("rms_penalty", &rms_penalty_value, py::arg("z"), py::arg("eps") = 0.0,
          "Mean-driving penalty of the RMS-scaled activation");
    m.def("lanczos", &lanczos_dense, py::arg("matrix"), py::arg("order") = 0,
          py::arg("probes") = 1, py::arg("seed") = 0,
          "Stochastic Lanczos quadrature on a dense symmetric matrix");
    m.def("synthetic",
          [](std::size_t n, const std::vector<std::size_t>& input, std::size_t classes,
             std::uint64_t seed) {
              return dataset_dict(synthetic_dataset(n, input, classes, Rng(seed)));
          },
          py::arg("n"), py::arg("input"), py::arg("classes"), py::arg("seed") = 0);
    m.def("load_idx", [](const std::string& path) { return array_from(load_idx(path)); },
          py::arg("path"));
    m.def("config_fingerprint",
          [](const std::string& text) {
              const ExperimentConfig cfg = parse_experiment_config(text);
              std::ostringstream ss;
              ss << std::hex << experiment_fingerprint(cfg);
              return ss.str();
          },
          py::arg("config_json"));
    m.def("canonical_config",
          [](const std::string& text) {
              return experiment_config_to_json(parse_experiment_config(text));
          },
          py::arg("config_json"));
    m.def("run_config",
          [](const std::string& text, std::optional<std::string> out_dir,
             std::optional<std::uint64_t> seed, std::size_t workers) {
              ExperimentConfig cfg = parse_experiment_config(text);
              if (out_dir) cfg.out_dir = *out_dir;
              if (seed) {
                  cfg.seed = *seed;
                  cfg.seeds = {*seed};
              }
              std::ostringstream log;
              const auto rows = run_experiment(cfg, workers, log);
              return py::make_tuple(rows_to_list(rows), log.str());
          },
          py::arg("config_json"), py::arg("out_dir") = py::none(),
          py::arg("seed") = py::none(), py::arg("workers") = 1,
          "Run a full experiment; returns (rows, log) and writes CSV + manifest");
}
