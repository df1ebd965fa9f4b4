#include "normlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "normlab/diagnostics.hpp"
#include "normlab/errors.hpp"
#include "normlab/lanczos.hpp"
#include "normlab/trainer.hpp"

namespace normlab {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kNoiseStream = 0x6e6f6973;    // diagnostic perturbations
constexpr std::uint64_t kPairStream = 0x70616972;     // confusion minibatches
constexpr std::uint64_t kProbeStream = 0x70726f62;    // Lanczos start vectors
constexpr std::uint64_t kDatasetStream = 0x64617461;  // synthetic data

struct Cell {
    NormKind norm;
    std::uint64_t seed = 0;
};

struct CellOutput {
    std::vector<MetricRow> rows;
    std::optional<double> test_acc;
    bool diverged = false;
};

struct CellContext {
    const ExperimentConfig& cfg;
    const Dataset& data;
    std::uint64_t fingerprint = 0;
};

Model make_model(const CellContext& ctx, const Cell& cell) {
    ModelConfig mc = ctx.cfg.model;
    mc.norm = cell.norm;
    mc.seed = cell.seed;
    return Model(mc);
}

MetricRow make_row(const CellContext& ctx, const Cell& cell, std::size_t step,
                   std::size_t layer, std::string metric, double value) {
    MetricRow row;
    row.experiment = experiment_kind_name(ctx.cfg.kind);
    row.normalizer = norm_kind_name(cell.norm);
    row.step = step;
    row.layer = layer;
    row.metric = std::move(metric);
    row.value = value;
    row.seed = cell.seed;
    row.fingerprint = ctx.fingerprint;
    return row;
}

void emit_trace(std::vector<MetricRow>& rows, const CellContext& ctx, const Cell& cell,
                const DepthTrace& trace, const std::string& metric, std::size_t step) {
    for (std::size_t i = 0; i < trace.values.size(); ++i) {
        rows.push_back(make_row(ctx, cell, step, i + 1, metric, trace.values[i].value));
    }
}

Tensor head_rows(const Tensor& x, std::size_t n) {
    std::vector<std::size_t> idx(std::min(n, x.shape()[0]));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return gather_rows(x, idx);
}

std::vector<std::size_t> head_labels(const std::vector<std::size_t>& y, std::size_t n) {
    return {y.begin(), y.begin() + static_cast<std::ptrdiff_t>(std::min(n, y.size()))};
}

NoiseSpec noise_spec(const CellContext& ctx) {
    return {ctx.cfg.diagnostics.noise_sigma, ctx.cfg.diagnostics.noise_relative};
}

TrainOptions train_options(const CellContext& ctx, const Cell& cell) {
    const TrainSection& t = ctx.cfg.train;
    TrainOptions opts;
    opts.lr = t.lr;
    opts.lambda_reg = t.lambda_reg;
    opts.steps = t.steps;
    opts.batch_size = t.batch_size;
    opts.eval_batch_size = t.eval_batch_size;
    opts.record_period = t.record_period;
    opts.diag_period = t.diag_period;
    opts.seed = cell.seed;
    return opts;
}

void emit_train_records(std::vector<MetricRow>& rows, const CellContext& ctx,
                        const Cell& cell, const TrainResult& result) {
    for (const TrainRecord& rec : result.records) {
        rows.push_back(make_row(ctx, cell, rec.step, 0, "train_loss", rec.loss));
        if (rec.train_acc) {
            rows.push_back(make_row(ctx, cell, rec.step, 0, "train_acc", *rec.train_acc));
        }
        if (rec.test_acc) {
            rows.push_back(make_row(ctx, cell, rec.step, 0, "test_acc", *rec.test_acc));
        }
    }
    if (result.diverged) {
        rows.push_back(make_row(ctx, cell, result.diverged_step, 0, "diverged", 1.0));
    }
}

CellOutput run_infoprop(const CellContext& ctx, const Cell& cell) {
    Model model = make_model(ctx, cell);
    const Tensor x = head_rows(ctx.data.train_x, ctx.cfg.diagnostics.probe_batch);
    const DepthTrace trace = info_prop_correlation(model, x, noise_spec(ctx),
                                                   NormMode::batch_train,
                                                   Rng(cell.seed).split(kNoiseStream));
    CellOutput out;
    emit_trace(out.rows, ctx, cell, trace, "info_prop_correlation", 0);
    return out;
}

CellOutput run_grad_corr(const CellContext& ctx, const Cell& cell) {
    Model model = make_model(ctx, cell);
    const std::size_t n = ctx.cfg.diagnostics.probe_batch;
    const Tensor x = head_rows(ctx.data.train_x, n);
    const auto y = head_labels(ctx.data.train_y, n);
    const DepthTrace trace = gradient_correlation_layers(model, x, y, noise_spec(ctx),
                                                         NormMode::batch_train,
                                                         Rng(cell.seed).split(kNoiseStream));
    CellOutput out;
    emit_trace(out.rows, ctx, cell, trace, "gradient_correlation", 0);
    return out;
}

CellOutput run_grad_norms(const CellContext& ctx, const Cell& cell) {
    Model model = make_model(ctx, cell);
    const std::size_t n = ctx.cfg.diagnostics.probe_batch;
    const Tensor x = head_rows(ctx.data.train_x, n);
    const auto y = head_labels(ctx.data.train_y, n);
    const GradNormProfile profile = gradient_norm_profile(model, x, y, NormMode::batch_train);
    CellOutput out;
    emit_trace(out.rows, ctx, cell, profile.trace, "gradient_norm", 0);
    out.rows.push_back(make_row(ctx, cell, 0, 0, "gradient_norm_ratio", profile.ratio.value));
    return out;
}

CellOutput run_early_dynamics(const CellContext& ctx, const Cell& cell) {
    Model model = make_model(ctx, cell);
    const std::size_t n = ctx.cfg.diagnostics.probe_batch;
    const Tensor px = head_rows(ctx.data.train_x, n);
    const NoiseSpec noise = noise_spec(ctx);
    const Rng noise_rng = Rng(cell.seed).split(kNoiseStream);  // same draws every diag step
    Rng pair_rng = Rng(cell.seed).split(kPairStream);

    CellOutput out;
    const DiagCallback on_diag = [&](Model& m, std::size_t step, TrainRecord&) {
        const DepthTrace trace =
            info_prop_correlation(m, px, noise, NormMode::batch_train, noise_rng);
        emit_trace(out.rows, ctx, cell, trace, "info_prop_correlation", step);

        const std::size_t pairs = ctx.cfg.diagnostics.batch_pairs;
        if (pairs >= 2) {
            const std::size_t bs = ctx.cfg.train.batch_size;
            const std::size_t total = ctx.data.train_y.size();
            std::vector<Tensor> batches;
            std::vector<std::vector<std::size_t>> labels;
            for (std::size_t p = 0; p < pairs; ++p) {
                std::vector<std::size_t> idx(bs);
                for (auto& i : idx) i = pair_rng.uniform_int(total);
                Tensor bx = gather_rows(ctx.data.train_x, idx);
                std::vector<std::size_t> by(bs);
                for (std::size_t j = 0; j < bs; ++j) by[j] = ctx.data.train_y[idx[j]];
                batches.push_back(std::move(bx));
                labels.push_back(std::move(by));
            }
            const ConfusionResult conf =
                gradient_confusion(m, batches, labels, NormMode::batch_train);
            out.rows.push_back(
                make_row(ctx, cell, step, 0, "gradient_confusion", conf.mean.value));
        }
    };

    const TrainResult result = train(model, ctx.data, train_options(ctx, cell), on_diag);
    emit_train_records(out.rows, ctx, cell, result);
    out.diverged = result.diverged;
    if (!result.diverged) out.test_acc = result.final_test_acc;
    return out;
}

CellOutput run_hessian(const CellContext& ctx, const Cell& cell) {
    Model model = make_model(ctx, cell);
    const TrainResult result = train(model, ctx.data, train_options(ctx, cell));
    CellOutput out;
    emit_train_records(out.rows, ctx, cell, result);
    out.diverged = result.diverged;
    if (result.diverged) return out;
    out.test_acc = result.final_test_acc;

    const std::size_t n = ctx.cfg.diagnostics.hessian_batch;
    const Tensor hx = head_rows(ctx.data.train_x, n);
    const auto hy = head_labels(ctx.data.train_y, n);
    const std::size_t dim = model.param_count();
    const std::size_t order = std::min(ctx.cfg.diagnostics.lanczos_order, dim);
    const LinearOp op = [&](const std::vector<double>& v) {
        return model_hvp(model, hx, hy, v, NormMode::batch_train);
    };
    const SpectrumEstimate spectrum = lanczos_spectrum(
        op, dim, order, ctx.cfg.diagnostics.lanczos_probes, Rng(cell.seed).split(kProbeStream));

    const std::size_t step = ctx.cfg.train.steps;
    for (std::size_t i = 0; i < spectrum.ritz_values.size(); ++i) {
        out.rows.push_back(make_row(ctx, cell, step, i, "ritz_value", spectrum.ritz_values[i]));
        out.rows.push_back(make_row(ctx, cell, step, i, "ritz_weight", spectrum.weights[i]));
    }
    std::vector<double> distinct = spectrum.ritz_values;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    const std::size_t k = std::min(ctx.cfg.diagnostics.outlier_k, distinct.size());
    if (k >= 1) {
        const Flagged ratio = outlier_ratio(spectrum, k);
        out.rows.push_back(make_row(ctx, cell, step, k, "outlier_ratio", ratio.value));
    }
    out.rows.push_back(make_row(ctx, cell, step, 0, "lambda_max", lambda_max(spectrum)));
    return out;
}

CellOutput run_batch_sweep(const CellContext& ctx, const Cell& cell) {
    ModelConfig mc = ctx.cfg.model;
    mc.norm = cell.norm;
    mc.seed = cell.seed;
    const auto cells = batch_size_sweep(mc, ctx.data, train_options(ctx, cell),
                                        ctx.cfg.sweep.train_sizes, ctx.cfg.sweep.eval_sizes);
    CellOutput out;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const SweepCell& sc : cells) {
        const double running = sc.missing ? nan : sc.acc_running_stats;
        const double batch = sc.missing ? nan : sc.acc_batch_stats;
        out.rows.push_back(make_row(ctx, cell, sc.train_batch, sc.eval_batch,
                                    "accuracy_running_stats", running));
        out.rows.push_back(make_row(ctx, cell, sc.train_batch, sc.eval_batch,
                                    "accuracy_batch_stats", batch));
        out.diverged |= sc.missing;
    }
    return out;
}

CellOutput run_train_eval(const CellContext& ctx, const Cell& cell) {
    ModelConfig mc = ctx.cfg.model;
    mc.norm = cell.norm;
    mc.seed = cell.seed;
    const std::vector<double>& grid =
        ctx.cfg.train.lr_grid.empty() ? default_lr_grid() : ctx.cfg.train.lr_grid;
    TrainOptions base = train_options(ctx, cell);
    base.record_period = 0;
    base.diag_period = 0;
    const GridResult grid_result = lr_grid_search(mc, ctx.data, base, grid);

    CellOutput out;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < grid_result.cells.size(); ++i) {
        const GridCell& gc = grid_result.cells[i];
        out.rows.push_back(make_row(ctx, cell, 0, i, "grid_lr", gc.lr));
        out.rows.push_back(
            make_row(ctx, cell, 0, i, "grid_acc", gc.diverged ? nan : gc.final_test_acc));
    }
    out.rows.push_back(
        make_row(ctx, cell, 0, 0, "best_lr", grid_result.found ? grid_result.best_lr : nan));
    if (!grid_result.found) {
        out.diverged = true;
        return out;
    }

    Model model = make_model(ctx, cell);
    TrainOptions opts = train_options(ctx, cell);
    opts.lr = grid_result.best_lr;
    const TrainResult result = train(model, ctx.data, opts);
    emit_train_records(out.rows, ctx, cell, result);
    out.diverged = result.diverged;
    if (!result.diverged) out.test_acc = result.final_test_acc;
    return out;
}

CellOutput run_cell(const CellContext& ctx, const Cell& cell) {
    switch (ctx.cfg.kind) {
        case ExperimentKind::infoprop: return run_infoprop(ctx, cell);
        case ExperimentKind::grad_corr: return run_grad_corr(ctx, cell);
        case ExperimentKind::grad_norms: return run_grad_norms(ctx, cell);
        case ExperimentKind::early_dynamics: return run_early_dynamics(ctx, cell);
        case ExperimentKind::hessian: return run_hessian(ctx, cell);
        case ExperimentKind::batch_sweep: return run_batch_sweep(ctx, cell);
        case ExperimentKind::train_eval: return run_train_eval(ctx, cell);
    }
    throw ParamError("unknown experiment kind");
}

void truncate_split(Tensor& x, std::vector<std::size_t>& y, std::size_t limit) {
    if (limit == 0 || limit >= y.size()) return;
    std::vector<std::size_t> idx(limit);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    x = gather_rows(x, idx);
    y.resize(limit);
}

std::string hex_fingerprint(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_manifest(const fs::path& dir, const ExperimentConfig& cfg,
                    std::uint64_t fingerprint, const Dataset& data,
                    const std::vector<Cell>& cells, const std::vector<CellOutput>& outputs,
                    const std::vector<fs::path>& files) {
    nlohmann::ordered_json m;
    m["experiment"] = experiment_kind_name(cfg.kind);
    m["fingerprint"] = hex_fingerprint(fingerprint);
    m["seed"] = cfg.seed;
    m["seeds"] = cfg.seeds;
    {
        std::vector<std::string> norms;
        for (NormKind k : cfg.normalizers) norms.push_back(norm_kind_name(k));
        m["normalizers"] = norms;
    }
    nlohmann::ordered_json d;
    d["id"] = data.id;
    d["classes"] = data.classes;
    d["train_examples"] = data.train_y.size();
    d["test_examples"] = data.test_y.size();
    m["dataset"] = d;
    {
        nlohmann::ordered_json cj = nlohmann::ordered_json::array();
        std::size_t total = 0;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            nlohmann::ordered_json c;
            c["normalizer"] = norm_kind_name(cells[i].norm);
            c["seed"] = cells[i].seed;
            c["rows"] = outputs[i].rows.size();
            c["diverged"] = outputs[i].diverged;
            cj.push_back(c);
            total += outputs[i].rows.size();
        }
        m["cells"] = cj;
        m["row_count"] = total;
    }
    {
        std::vector<std::string> names;
        for (const auto& f : files) names.push_back(f.filename().string());
        m["files"] = names;
    }
    m["config"] = nlohmann::ordered_json::parse(experiment_config_to_json(cfg));

    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw DataError("cannot write manifest under '" + dir.string() + "'");
    out << m.dump(2) << '\n';
}

}  // namespace

fs::path dataset_root() {
    if (const char* env = std::getenv("NORMLAB_DATA_DIR"); env && *env) return env;
    return "data";
}

Dataset resolve_dataset(const ExperimentConfig& config) {
    Dataset data;
    if (config.dataset.id == "synthetic") {
        data = synthetic_dataset(config.dataset.n, config.model.input, config.model.classes,
                                 Rng(config.seed).split(kDatasetStream));
    } else if (config.dataset.id == "mnist") {
        const fs::path dir =
            config.dataset.path.empty() ? dataset_root() / "mnist" : fs::path(config.dataset.path);
        data = load_mnist(dir.string());
    } else {
        const fs::path dir = config.dataset.path.empty()
                                 ? dataset_root() / "cifar-10-batches-bin"
                                 : fs::path(config.dataset.path);
        std::vector<std::string> train_files;
        for (int i = 1; i <= 5; ++i) {
            train_files.push_back((dir / ("data_batch_" + std::to_string(i) + ".bin")).string());
        }
        data = load_cifar10(train_files, (dir / "test_batch.bin").string());
    }
    if (data.classes != config.model.classes) {
        throw ConfigError("model.classes is " + std::to_string(config.model.classes) + " but '" +
                          data.id + "' has " + std::to_string(data.classes) + " classes");
    }
    const std::size_t per_sample = shape_numel(data.train_x.shape()) / data.train_x.shape()[0];
    if (per_sample != shape_numel(config.model.input)) {
        throw ConfigError("model.input " + shape_str(config.model.input) + " does not match '" +
                          data.id + "' examples (" + std::to_string(per_sample) + " values each)");
    }
    truncate_split(data.train_x, data.train_y, config.dataset.limit);
    truncate_split(data.test_x, data.test_y, config.dataset.test_limit);
    return data;
}

std::vector<MetricRow> run_experiment(const ExperimentConfig& config, std::size_t workers,
                                      std::ostream& log) {
    const Dataset data = resolve_dataset(config);
    const std::uint64_t fingerprint = experiment_fingerprint(config);
    const CellContext ctx{config, data, fingerprint};

    std::vector<Cell> cells;
    for (NormKind norm : config.normalizers) {
        for (std::uint64_t seed : config.seeds) cells.push_back({norm, seed});
    }

    std::vector<CellOutput> outputs(cells.size());
    std::vector<std::string> failures(cells.size());
    std::atomic<std::size_t> next{0};
    const auto work = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            try {
                outputs[i] = run_cell(ctx, cells[i]);
            } catch (const std::exception& e) {
                failures[i] = e.what();
            }
        }
    };
    const std::size_t pool = std::max<std::size_t>(1, std::min(workers, cells.size()));
    if (pool == 1) {
        work();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < pool; ++t) threads.emplace_back(work);
        for (auto& t : threads) t.join();
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!failures[i].empty()) {
            throw Error("cell " + norm_kind_name(cells[i].norm) + "/seed " +
                        std::to_string(cells[i].seed) + " failed: " + failures[i]);
        }
    }

    std::vector<MetricRow> all_rows;
    for (const CellOutput& out : outputs) {
        all_rows.insert(all_rows.end(), out.rows.begin(), out.rows.end());
    }

    const fs::path dir = config.out_dir;
    fs::create_directories(dir);
    const auto files = write_metric_files(dir, all_rows);
    write_manifest(dir, config, fingerprint, data, cells, outputs, files);

    for (std::size_t n = 0; n < config.normalizers.size(); ++n) {
        std::size_t rows = 0, diverged = 0;
        double acc_sum = 0.0;
        std::size_t acc_count = 0;
        for (std::size_t s = 0; s < config.seeds.size(); ++s) {
            const CellOutput& out = outputs[n * config.seeds.size() + s];
            rows += out.rows.size();
            diverged += out.diverged ? 1 : 0;
            if (out.test_acc) {
                acc_sum += *out.test_acc;
                ++acc_count;
            }
        }
        log << norm_kind_name(config.normalizers[n]) << ": " << rows << " rows over "
            << config.seeds.size() << " seed(s)";
        if (acc_count > 0) log << ", mean test acc " << acc_sum / static_cast<double>(acc_count);
        if (diverged > 0) log << ", " << diverged << " diverged";
        log << "\n";
    }
    return all_rows;
}

int run_config_file(const std::string& path, const RunOptions& options, std::ostream& log) {
    try {
        ExperimentConfig cfg = load_experiment_config(path);
        if (options.out_dir) cfg.out_dir = *options.out_dir;
        if (options.seed) {
            cfg.seed = *options.seed;
            cfg.seeds = {*options.seed};
        }
        run_experiment(cfg, options.workers, log);
        log << "wrote " << cfg.out_dir << "/manifest.json\n";
        return 0;
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return 2;
    }
}

int validate_config_file(const std::string& path, std::ostream& log) {
    try {
        const ExperimentConfig cfg = load_experiment_config(path);
        log << "ok: " << experiment_kind_name(cfg.kind) << ", "
            << cfg.normalizers.size() * cfg.seeds.size() << " cell(s), fingerprint "
            << hex_fingerprint(experiment_fingerprint(cfg)) << "\n";
        return 0;
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return 2;
    }
}

int datasets_check(std::ostream& log) {
    const fs::path root = dataset_root();
    log << "dataset root: " << root.string() << "\n";
    log << "synthetic: always available (generated from the experiment seed)\n";
    int code = 0;

    const fs::path mnist_dir = root / "mnist";
    const std::vector<std::string> mnist_files = {
        "train-images-idx3-ubyte", "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};
    bool mnist_present = true;
    for (const auto& f : mnist_files) {
        if (!fs::exists(mnist_dir / f)) mnist_present = false;
    }
    if (!mnist_present) {
        log << "mnist: not found (expected the four idx files under " << mnist_dir.string()
            << ")\n";
    } else {
        try {
            const Dataset d = load_mnist(mnist_dir.string());
            log << "mnist: ok, " << d.train_y.size() << " train / " << d.test_y.size()
                << " test examples\n";
        } catch (const std::exception& e) {
            log << "mnist: unreadable: " << e.what() << "\n";
            code = 2;
        }
    }

    const fs::path cifar_dir = root / "cifar-10-batches-bin";
    bool cifar_present = fs::exists(cifar_dir / "test_batch.bin");
    for (int i = 1; i <= 5; ++i) {
        if (!fs::exists(cifar_dir / ("data_batch_" + std::to_string(i) + ".bin"))) {
            cifar_present = false;
        }
    }
    if (!cifar_present) {
        log << "cifar10: not found (expected the binary batches under " << cifar_dir.string()
            << ")\n";
    } else {
        try {
            std::vector<std::string> train_files;
            for (int i = 1; i <= 5; ++i) {
                train_files.push_back(
                    (cifar_dir / ("data_batch_" + std::to_string(i) + ".bin")).string());
            }
            const Dataset d = load_cifar10(train_files, (cifar_dir / "test_batch.bin").string());
            log << "cifar10: ok, " << d.train_y.size() << " train / " << d.test_y.size()
                << " test examples\n";
        } catch (const std::exception& e) {
            log << "cifar10: unreadable: " << e.what() << "\n";
            code = 2;
        }
    }
    return code;
}

}  // namespace normlab
