#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace normlab {

// One measurement. `layer` doubles as a generic index column for metrics that
// are not per-layer (Ritz index, grid index, eval batch size); see README.
struct MetricRow {
    std::string experiment;
    std::string normalizer;
    std::size_t step = 0;
    std::size_t layer = 0;
    std::string metric;
    double value = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t fingerprint = 0;
};

// 17 significant digits, '.' decimal separator, locale-independent.
std::string format_double(double v);

std::string csv_line(const MetricRow& row);

// Writes one file with the fixed header; LF line endings. Creates parent dirs.
void write_metric_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

// Splits rows by metric name and writes <dir>/<metric>.csv for each,
// preserving row order within a metric.
std::vector<std::filesystem::path> write_metric_files(const std::filesystem::path& dir,
                                                      const std::vector<MetricRow>& rows);

}  // namespace normlab
