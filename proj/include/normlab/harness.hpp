#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "normlab/config.hpp"
#include "normlab/csv.hpp"
#include "normlab/dataset.hpp"

namespace normlab {

struct RunOptions {
    std::optional<std::string> out_dir;     // --out
    std::optional<std::uint64_t> seed;      // --seed (replaces seed and seeds)
    std::size_t workers = 1;                // --workers
};

// NORMLAB_DATA_DIR if set, else ./data.
std::filesystem::path dataset_root();

// Materializes the dataset named by the config: synthetic data is generated
// from the experiment seed; mnist/cifar10 load from dataset.path or the
// dataset root. limit / test_limit keep a prefix of each split.
Dataset resolve_dataset(const ExperimentConfig& config);

// Runs every (normalizer, seed) cell, writes one CSV per metric plus
// manifest.json (always last) under the output directory. Returns the rows
// in cell order; `log` receives one summary line per normalizer.
std::vector<MetricRow> run_experiment(const ExperimentConfig& config,
                                      std::size_t workers, std::ostream& log);

// CLI entry points; exceptions become exit codes (1 validation, 2 runtime).
int run_config_file(const std::string& path, const RunOptions& options, std::ostream& log);
int validate_config_file(const std::string& path, std::ostream& log);
int datasets_check(std::ostream& log);

}  // namespace normlab
