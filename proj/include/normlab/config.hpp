#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "normlab/model.hpp"
#include "normlab/normalizers.hpp"

namespace normlab {

enum class ExperimentKind {
    infoprop,
    grad_corr,
    grad_norms,
    early_dynamics,
    hessian,
    batch_sweep,
    train_eval,
};

std::string experiment_kind_name(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& name);

struct DatasetConfig {
    std::string id = "synthetic";  // synthetic | mnist | cifar10
    std::size_t n = 2048;          // synthetic sample count (before the 80/20 split)
    std::string path;              // subdirectory under the data root
    std::size_t limit = 0;         // cap on train samples, 0 = all
    std::size_t test_limit = 0;    // cap on test samples, 0 = all
};

struct TrainSection {
    double lr = 0.0;               // fixed rate; 0 means "use the grid"
    std::vector<double> lr_grid;   // empty means the default decade grid
    double lambda_reg = 0.0;
    std::size_t steps = 1000;
    std::size_t batch_size = 32;
    std::size_t eval_batch_size = 256;
    std::size_t record_period = 10;
    std::size_t diag_period = 0;
};

struct DiagnosticsConfig {
    double noise_sigma = 0.01;
    bool noise_relative = true;
    std::size_t probe_batch = 256;   // samples fed to correlation probes
    std::size_t lanczos_order = 50;
    std::size_t lanczos_probes = 4;
    std::size_t hessian_batch = 256;
    std::size_t outlier_k = 10;
    std::size_t batch_pairs = 4;     // minibatches for gradient confusion
};

struct SweepConfig {
    std::vector<std::size_t> train_sizes = {32};
    std::vector<std::size_t> eval_sizes = {2, 4, 8, 16, 32, 64, 128, 256};
};

// One experiment = one kind executed for every (normalizer, seed) cell.
// The model section deliberately has no norm/seed fields; those come from
// `normalizers` and `seeds`.
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::infoprop;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seeds;  // defaults to {seed}
    std::string out_dir = "results";
    std::vector<NormKind> normalizers;
    ModelConfig model;
    DatasetConfig dataset;
    TrainSection train;
    DiagnosticsConfig diagnostics;
    SweepConfig sweep;
};

// Strict parse: every key must be known, kind-specific requirements are
// checked up front, and nothing is silently ignored.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

// Canonical serialization: fixed key order, defaults materialized. Parsing
// the output yields an identical config.
std::string experiment_config_to_json(const ExperimentConfig& config);

std::uint64_t experiment_fingerprint(const ExperimentConfig& config);

}  // namespace normlab
