#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "unlearn/eval.hpp"
#include "unlearn/pipeline.hpp"

namespace unlearn {

/// Two decimals, e.g. 97.96.
std::string format_percent(double value);
/// Percentage rounded to two decimals as a number.
double round2(double value);

/// One JSON object per row, percentages rounded to two decimals, RTE null
/// when absent.
std::string metrics_to_json(const std::vector<MetricsReport>& rows);
std::vector<MetricsReport> metrics_from_json(const std::string& text);

/// Table-1 layout: one line per paradigm with UA, MIA-Efficacy, RA and TA at
/// every epoch setting, then RTE, memory proxy and trainable parameters.
std::string metrics_to_table_csv(const std::vector<MetricsReport>& rows);

/// "set,loss" lines, set is "test" or "forget".
std::string loss_split_to_csv(const LossSplit& split);

std::string run_record_to_json(const RunRecord& record);
RunRecord run_record_from_json(const std::string& text);

/// Writes <dir>/metrics.json and <dir>/table1.csv. ConfigError for an empty
/// row set, IoError when a file cannot be written.
void build_report(const std::vector<MetricsReport>& rows, const std::filesystem::path& dir);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace unlearn
