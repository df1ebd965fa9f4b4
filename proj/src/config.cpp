#include "normlab/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "normlab/errors.hpp"
#include "normlab/hashing.hpp"

namespace normlab {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
    std::vector<std::string> unknown;
    for (const auto& [key, _] : obj.items()) {
        bool known = false;
        for (const char* a : allowed) {
            if (key == a) {
                known = true;
                break;
            }
        }
        if (!known) unknown.push_back(key);
    }
    if (!unknown.empty()) {
        std::string msg = "unknown key(s) in " + where + ":";
        for (const auto& k : unknown) msg += " '" + k + "'";
        throw ConfigError(msg);
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

void parse_model(const json& obj, ModelConfig& m) {
    check_keys(obj, "model",
               {"arch", "depth", "width", "skip", "activation", "classes", "input", "eps",
                "momentum"});
    m.arch = parse_model_arch(get_or<std::string>(obj, "arch", model_arch_name(m.arch)));
    m.depth = get_or<std::size_t>(obj, "depth", m.depth);
    m.width = get_or<std::size_t>(obj, "width", m.width);
    m.skip = get_or<bool>(obj, "skip", m.skip);
    m.activation =
        parse_activation(get_or<std::string>(obj, "activation", activation_name(m.activation)));
    m.classes = get_or<std::size_t>(obj, "classes", m.classes);
    if (obj.contains("input")) {
        m.input.clear();
        for (const auto& v : obj.at("input")) {
            const auto d = v.get<std::int64_t>();
            if (d <= 0) throw ConfigError("model input dimensions must be positive");
            m.input.push_back(static_cast<std::size_t>(d));
        }
    }
    m.norm_opts.eps = get_or<double>(obj, "eps", m.norm_opts.eps);
    m.norm_opts.momentum = get_or<double>(obj, "momentum", m.norm_opts.momentum);
}

void parse_dataset(const json& obj, DatasetConfig& d) {
    check_keys(obj, "dataset", {"id", "n", "path", "limit", "test_limit"});
    d.id = get_or<std::string>(obj, "id", d.id);
    if (d.id != "synthetic" && d.id != "mnist" && d.id != "cifar10") {
        throw ConfigError("unknown dataset '" + d.id +
                          "' (valid: synthetic, mnist, cifar10)");
    }
    d.n = get_or<std::size_t>(obj, "n", d.n);
    d.path = get_or<std::string>(obj, "path", d.path);
    d.limit = get_or<std::size_t>(obj, "limit", d.limit);
    d.test_limit = get_or<std::size_t>(obj, "test_limit", d.test_limit);
}

void parse_train(const json& obj, TrainSection& t) {
    check_keys(obj, "train",
               {"lr", "lr_grid", "lambda_reg", "steps", "batch_size", "eval_batch_size",
                "record_period", "diag_period"});
    t.lr = get_or<double>(obj, "lr", t.lr);
    if (obj.contains("lr_grid")) {
        t.lr_grid.clear();
        for (const auto& v : obj.at("lr_grid")) t.lr_grid.push_back(v.get<double>());
    }
    t.lambda_reg = get_or<double>(obj, "lambda_reg", t.lambda_reg);
    t.steps = get_or<std::size_t>(obj, "steps", t.steps);
    t.batch_size = get_or<std::size_t>(obj, "batch_size", t.batch_size);
    t.eval_batch_size = get_or<std::size_t>(obj, "eval_batch_size", t.eval_batch_size);
    t.record_period = get_or<std::size_t>(obj, "record_period", t.record_period);
    t.diag_period = get_or<std::size_t>(obj, "diag_period", t.diag_period);
}

void parse_diagnostics(const json& obj, DiagnosticsConfig& d) {
    check_keys(obj, "diagnostics",
               {"noise_sigma", "noise_relative", "probe_batch", "lanczos_order",
                "lanczos_probes", "hessian_batch", "outlier_k", "batch_pairs"});
    d.noise_sigma = get_or<double>(obj, "noise_sigma", d.noise_sigma);
    d.noise_relative = get_or<bool>(obj, "noise_relative", d.noise_relative);
    d.probe_batch = get_or<std::size_t>(obj, "probe_batch", d.probe_batch);
    d.lanczos_order = get_or<std::size_t>(obj, "lanczos_order", d.lanczos_order);
    d.lanczos_probes = get_or<std::size_t>(obj, "lanczos_probes", d.lanczos_probes);
    d.hessian_batch = get_or<std::size_t>(obj, "hessian_batch", d.hessian_batch);
    d.outlier_k = get_or<std::size_t>(obj, "outlier_k", d.outlier_k);
    d.batch_pairs = get_or<std::size_t>(obj, "batch_pairs", d.batch_pairs);
}

void parse_sweep(const json& obj, SweepConfig& s) {
    check_keys(obj, "sweep", {"train_sizes", "eval_sizes"});
    const auto read_sizes = [&](const char* key, std::vector<std::size_t>& out) {
        if (!obj.contains(key)) return;
        out.clear();
        for (const auto& v : obj.at(key)) {
            const auto d = v.get<std::int64_t>();
            if (d <= 0) throw ConfigError(std::string(key) + " entries must be positive");
            out.push_back(static_cast<std::size_t>(d));
        }
    };
    read_sizes("train_sizes", s.train_sizes);
    read_sizes("eval_sizes", s.eval_sizes);
}

void validate_config(ExperimentConfig& c) {
    if (c.normalizers.empty()) throw ConfigError("normalizers list must be non-empty");
    if (c.seeds.empty()) c.seeds = {c.seed};
    if (c.train.steps == 0) throw ConfigError("train.steps must be >= 1");
    if (c.diagnostics.probe_batch < 2) {
        throw ConfigError("diagnostics.probe_batch must be >= 2");
    }
    if (c.train.lambda_reg < 0.0) throw ConfigError("lambda_reg must be non-negative");
    if (c.train.lambda_reg > 0.0) {
        for (NormKind k : c.normalizers) {
            if (k != NormKind::regnorm && k != NormKind::preregnorm) {
                throw ConfigError("lambda_reg applies only to rms-penalty normalizers; '" +
                                  norm_kind_name(k) + "' is in the list");
            }
        }
    }
    if (c.model.input.empty()) {
        if (c.dataset.id == "mnist") {
            c.model.input = {28, 28, 1};
        } else if (c.dataset.id == "cifar10") {
            c.model.input = {32, 32, 3};
        } else {
            throw ConfigError("model.input is required for synthetic data");
        }
    }
    if (c.dataset.id == "synthetic" && c.dataset.n < c.model.classes * 5) {
        throw ConfigError("dataset.n too small for an 80/20 split over " +
                          std::to_string(c.model.classes) + " classes");
    }
    switch (c.kind) {
        case ExperimentKind::hessian:
            if (c.train.lr <= 0.0) {
                throw ConfigError("hessian experiments need a fixed positive train.lr");
            }
            if (c.diagnostics.lanczos_order == 0 || c.diagnostics.lanczos_probes == 0) {
                throw ConfigError("lanczos order and probe count must be >= 1");
            }
            break;
        case ExperimentKind::batch_sweep: {
            if (c.sweep.train_sizes.empty() || c.sweep.eval_sizes.empty()) {
                throw ConfigError("sweep sizes must be non-empty");
            }
            bool batch_dependent = false;
            for (NormKind k : c.normalizers) batch_dependent |= norm_uses_batch_stats(k);
            if (batch_dependent) {
                for (std::size_t s : c.sweep.train_sizes) {
                    if (s < 2) throw ConfigError("train sizes must be >= 2 for batch statistics");
                }
                for (std::size_t s : c.sweep.eval_sizes) {
                    if (s < 2) throw ConfigError("eval sizes must be >= 2 for batch statistics");
                }
            }
            if (c.train.lr <= 0.0) {
                throw ConfigError("batch_sweep needs a fixed positive train.lr");
            }
            break;
        }
        case ExperimentKind::early_dynamics:
            if (c.train.lr <= 0.0) {
                throw ConfigError("early_dynamics needs a fixed positive train.lr");
            }
            if (c.train.diag_period == 0) {
                c.train.diag_period = std::max<std::size_t>(1, c.train.steps / 20);
            }
            break;
        default:
            break;
    }
}

}  // namespace

std::string experiment_kind_name(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::infoprop: return "infoprop";
        case ExperimentKind::grad_corr: return "grad_corr";
        case ExperimentKind::grad_norms: return "grad_norms";
        case ExperimentKind::early_dynamics: return "early_dynamics";
        case ExperimentKind::hessian: return "hessian";
        case ExperimentKind::batch_sweep: return "batch_sweep";
        case ExperimentKind::train_eval: return "train_eval";
    }
    throw ParamError("unknown experiment kind");
}

ExperimentKind parse_experiment_kind(const std::string& name) {
    for (ExperimentKind k :
         {ExperimentKind::infoprop, ExperimentKind::grad_corr, ExperimentKind::grad_norms,
          ExperimentKind::early_dynamics, ExperimentKind::hessian,
          ExperimentKind::batch_sweep, ExperimentKind::train_eval}) {
        if (experiment_kind_name(k) == name) return k;
    }
    throw ConfigError("unknown experiment '" + name +
                      "' (valid: infoprop, grad_corr, grad_norms, early_dynamics, "
                      "hessian, batch_sweep, train_eval)");
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config root must be a JSON object");
    check_keys(root, "config",
               {"experiment", "seed", "seeds", "out_dir", "normalizers", "model", "dataset",
                "train", "diagnostics", "sweep"});
    if (!root.contains("experiment")) throw ConfigError("missing 'experiment'");
    if (!root.contains("normalizers")) throw ConfigError("missing 'normalizers'");

    ExperimentConfig c;
    try {
        c.kind = parse_experiment_kind(root.at("experiment").get<std::string>());
        c.seed = get_or<std::uint64_t>(root, "seed", 0);
        if (root.contains("seeds")) {
            for (const auto& v : root.at("seeds")) c.seeds.push_back(v.get<std::uint64_t>());
        }
        c.out_dir = get_or<std::string>(root, "out_dir", c.out_dir);
        for (const auto& v : root.at("normalizers")) {
            c.normalizers.push_back(parse_norm_kind(v.get<std::string>()));
        }
        if (root.contains("model")) parse_model(root.at("model"), c.model);
        if (root.contains("dataset")) parse_dataset(root.at("dataset"), c.dataset);
        if (root.contains("train")) parse_train(root.at("train"), c.train);
        if (root.contains("diagnostics")) {
            parse_diagnostics(root.at("diagnostics"), c.diagnostics);
        }
        if (root.contains("sweep")) parse_sweep(root.at("sweep"), c.sweep);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    validate_config(c);
    return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_experiment_config(ss.str());
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
    ordered_json root;
    root["experiment"] = experiment_kind_name(c.kind);
    root["seed"] = c.seed;
    root["seeds"] = c.seeds;
    root["out_dir"] = c.out_dir;
    {
        std::vector<std::string> norms;
        for (NormKind k : c.normalizers) norms.push_back(norm_kind_name(k));
        root["normalizers"] = norms;
    }
    ordered_json m;
    m["arch"] = model_arch_name(c.model.arch);
    m["depth"] = c.model.depth;
    m["width"] = c.model.width;
    m["skip"] = c.model.skip;
    m["activation"] = activation_name(c.model.activation);
    m["classes"] = c.model.classes;
    m["input"] = c.model.input;
    m["eps"] = c.model.norm_opts.eps;
    m["momentum"] = c.model.norm_opts.momentum;
    root["model"] = m;
    ordered_json d;
    d["id"] = c.dataset.id;
    d["n"] = c.dataset.n;
    d["path"] = c.dataset.path;
    d["limit"] = c.dataset.limit;
    d["test_limit"] = c.dataset.test_limit;
    root["dataset"] = d;
    ordered_json t;
    t["lr"] = c.train.lr;
    t["lr_grid"] = c.train.lr_grid;
    t["lambda_reg"] = c.train.lambda_reg;
    t["steps"] = c.train.steps;
    t["batch_size"] = c.train.batch_size;
    t["eval_batch_size"] = c.train.eval_batch_size;
    t["record_period"] = c.train.record_period;
    t["diag_period"] = c.train.diag_period;
    root["train"] = t;
    ordered_json g;
    g["noise_sigma"] = c.diagnostics.noise_sigma;
    g["noise_relative"] = c.diagnostics.noise_relative;
    g["probe_batch"] = c.diagnostics.probe_batch;
    g["lanczos_order"] = c.diagnostics.lanczos_order;
    g["lanczos_probes"] = c.diagnostics.lanczos_probes;
    g["hessian_batch"] = c.diagnostics.hessian_batch;
    g["outlier_k"] = c.diagnostics.outlier_k;
    g["batch_pairs"] = c.diagnostics.batch_pairs;
    root["diagnostics"] = g;
    ordered_json s;
    s["train_sizes"] = c.sweep.train_sizes;
    s["eval_sizes"] = c.sweep.eval_sizes;
    root["sweep"] = s;
    return root.dump(2) + "\n";
}

std::uint64_t experiment_fingerprint(const ExperimentConfig& config) {
    return fnv1a_string(experiment_config_to_json(config));
}

}  // namespace normlab
