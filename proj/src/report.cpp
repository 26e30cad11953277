#include "spg/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace spg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Scalar metrics reported when present in a summary.
constexpr const char* kMetrics[] = {"accuracy", "loss", "mean_iou", "clean_accuracy"};

std::optional<json> read_summary(const fs::path& path, std::vector<std::string>& missing) {
  std::ifstream in(path);
  if (!in) {
    missing.push_back(fmt::format("{} (missing)", path.string()));
    return std::nullopt;
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    missing.push_back(fmt::format("{} (unreadable: {})", path.string(), e.what()));
    return std::nullopt;
  }
}

std::optional<double> number_at(const json& j, const char* section, const char* key) {
  if (!j.contains(section) || !j[section].is_object()) return std::nullopt;
  const auto& s = j[section];
  if (!s.contains(key) || !s[key].is_number()) return std::nullopt;
  return s[key].get<double>();
}

std::string stat_text(const std::optional<SeedStat>& s, double scale, int digits) {
  if (!s) return "-";
  if (!s->stddev) return fmt::format("{:.{}f}", scale * s->mean, digits);
  return fmt::format("{:.{}f} ± {:.{}f}", scale * s->mean, digits, scale * *s->stddev, digits);
}

json stat_json(const std::optional<SeedStat>& s) {
  if (!s) return nullptr;
  return {{"n", s->n}, {"mean", s->mean}, {"std", s->stddev ? json(*s->stddev) : json(nullptr)}};
}

}  // namespace

SeedStat seed_stat(std::span<const double> values) {
  SeedStat s;
  s.n = values.size();
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(s.n - 1));
  }
  return s;
}

Report build_report(std::span<const fs::path> dirs) {
  Report rep;
  std::vector<json> summaries;
  auto take = [&](const fs::path& dir) {
    if (auto j = read_summary(dir / "summary.json", rep.missing)) {
      rep.runs.push_back(dir);
      summaries.push_back(std::move(*j));
    }
  };
  for (const auto& dir : dirs) {
    if (!fs::is_directory(dir)) {
      rep.missing.push_back(fmt::format("{} (not a directory)", dir.string()));
      continue;
    }
    if (fs::exists(dir / "summary.json")) {
      take(dir);
      continue;
    }
    std::vector<fs::path> children;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_directory()) children.push_back(e.path());
    std::sort(children.begin(), children.end());
    if (children.empty()) rep.missing.push_back(fmt::format("{} (no summary.json and no run directories)", dir.string()));
    for (const auto& c : children) take(c);
  }
  if (summaries.empty())
    throw ReportError(fmt::format("no completed runs found; missing:\n  {}", fmt::join(rep.missing, "\n  ")));

  for (const char* metric : kMetrics) {
    std::vector<double> base, spg, gain;
    for (const auto& s : summaries) {
      const auto b = number_at(s, "baseline", metric);
      const auto g = number_at(s, "spg", metric);
      if (b) base.push_back(*b);
      if (g) spg.push_back(*g);
      if (b && g) gain.push_back(*g - *b);
    }
    if (base.empty() && spg.empty()) continue;
    ReportRow row;
    row.metric = metric;
    if (!base.empty()) row.baseline = seed_stat(base);
    if (!spg.empty()) row.spg = seed_stat(spg);
    if (!gain.empty()) row.gain = seed_stat(gain);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

void print_report(std::ostream& out, const Report& report) {
  out << fmt::format("runs: {}\n", report.runs.size());
  out << fmt::format("{:<16}{:>20}{:>20}{:>20}{:>5}\n", "metric", "baseline", "spg (stripped)", "gain", "n");
  for (const auto& r : report.rows) {
    // accuracies and IoU read better as percentages
    const bool loss = r.metric == "loss";
    const double scale = loss ? 1.0 : 100.0;
    const int digits = loss ? 4 : 2;
    const std::size_t n = std::max(r.baseline ? r.baseline->n : 0, r.spg ? r.spg->n : 0);
    out << fmt::format("{:<16}{:>20}{:>20}{:>20}{:>5}\n", r.metric, stat_text(r.baseline, scale, digits),
                       stat_text(r.spg, scale, digits), stat_text(r.gain, scale, digits), n);
  }
  if (!report.missing.empty()) {
    out << "missing:\n";
    for (const auto& m : report.missing) out << "  " << m << '\n';
  }
}

json report_json(const Report& report) {
  json j{{"schema", 1}, {"runs", json::array()}, {"missing", report.missing}, {"metrics", json::object()}};
  for (const auto& r : report.runs) j["runs"].push_back(r.string());
  for (const auto& r : report.rows)
    j["metrics"][r.metric] = {{"baseline", stat_json(r.baseline)}, {"spg", stat_json(r.spg)}, {"gain", stat_json(r.gain)}};
  return j;
}

}  // namespace spg
