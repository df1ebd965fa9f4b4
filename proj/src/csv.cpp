#include "normlab/csv.hpp"

#include <cstdio>
#include <fstream>
#include <map>

#include "normlab/errors.hpp"

namespace normlab {

namespace {
constexpr const char* kHeader = "experiment,normalizer,step,layer,metric,value,seed,fingerprint";

std::string format_u64_hex(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}
}  // namespace

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string csv_line(const MetricRow& row) {
    std::string line;
    line += row.experiment;
    line += ',';
    line += row.normalizer;
    line += ',';
    line += std::to_string(row.step);
    line += ',';
    line += std::to_string(row.layer);
    line += ',';
    line += row.metric;
    line += ',';
    line += format_double(row.value);
    line += ',';
    line += std::to_string(row.seed);
    line += ',';
    line += format_u64_hex(row.fingerprint);
    return line;
}

void write_metric_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);  // binary: LF endings everywhere
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << kHeader << '\n';
    for (const auto& row : rows) out << csv_line(row) << '\n';
    out.flush();
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::vector<std::filesystem::path> write_metric_files(const std::filesystem::path& dir,
                                                      const std::vector<MetricRow>& rows) {
    std::map<std::string, std::vector<MetricRow>> by_metric;
    for (const auto& row : rows) by_metric[row.metric].push_back(row);
    std::vector<std::filesystem::path> written;
    for (const auto& [metric, metric_rows] : by_metric) {
        const auto path = dir / (metric + ".csv");
        write_metric_csv(path, metric_rows);
        written.push_back(path);
    }
    return written;
}

}  // namespace normlab
