#pragma once

// Seed aggregation over completed run directories (summary.json files).

#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace spg {

/// No summary.json found anywhere under the given directories.
class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SeedStat {
  std::size_t n = 0;
  double mean = 0.0;
  /// Sample standard deviation (n - 1); absent for n = 1.
  std::optional<double> stddev;
};

/// mean and sample standard deviation of `values` (n >= 1).
SeedStat seed_stat(std::span<const double> values);

struct ReportRow {
  std::string metric;  // e.g. "accuracy", "mean_iou"
  std::optional<SeedStat> baseline;
  std::optional<SeedStat> spg;
  std::optional<SeedStat> gain;  // spg - baseline, paired by run
};

struct Report {
  std::vector<std::filesystem::path> runs;
  std::vector<std::string> missing;  // directories without summary.json, or unreadable ones
  std::vector<ReportRow> rows;
};

/// Each argument is a run directory (has summary.json) or a parent whose
/// immediate subdirectories are runs. Throws ReportError when no run is found.
Report build_report(std::span<const std::filesystem::path> dirs);

void print_report(std::ostream& out, const Report& report);
nlohmann::json report_json(const Report& report);

}  // namespace spg
