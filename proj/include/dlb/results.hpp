#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlb/experiment.hpp"

namespace dlb {

inline constexpr const char* kResultsHeader = "kind,depth,width,params,lr,seed,epochs,stop_reason,train_metric,test_metric";

/// 17 significant digits, '.' separator, "inf"/"-inf"/"nan" for non-finite values.
std::string format_double(double value);

/// CSV text of `records` in canonical order; header only when empty.
std::string results_csv(std::vector<RunRecord> records);

/// Writes results_csv(records) to `path`. Throws IoError.
void write_results(const std::vector<RunRecord>& records, const std::string& path);

/// Deterministic manifest: the config, the subcommand and the tool version. No timings.
nlohmann::json make_manifest(const nlohmann::json& config, const std::string& command);

/// Per-row wall-clock seconds, in canonical row order.
nlohmann::json make_timing(std::vector<RunRecord> records);

/// Writes `value` as indented JSON with a trailing newline. Throws IoError.
void write_json(const nlohmann::json& value, const std::string& path);

/// Context for read-back validation of the params column. Without `d` the column is only
/// checked for positivity.
struct RowSchema {
    std::optional<int> d;
    std::optional<InitKind> init;
};

/// Parses and validates a results CSV. Throws NotFound, or ParseError naming line and column.
std::vector<RunRecord> read_results(const std::string& path, const RowSchema& schema = {});
std::vector<RunRecord> parse_results(const std::string& text, const std::string& source,
                                     const RowSchema& schema = {});

/// One aggregated cell of a report.
struct ReportRow {
    std::string kind;
    int depth = 0;
    std::optional<double> lr;
    std::size_t n = 0;           // rows aggregated
    std::size_t excluded = 0;    // diverged or non-finite rows skipped
    double mean = 0.0;           // of test_metric
    double stderr_ = 0.0;        // sample standard deviation / sqrt(n); 0 when n < 2
};

/// Groups by (kind, depth) or (kind, depth, lr), sorted by depth, lr, kind.
std::vector<ReportRow> aggregate(const std::vector<RunRecord>& records, bool by_lr);
std::string report_csv(const std::vector<ReportRow>& rows, bool by_lr);

}  // namespace dlb
