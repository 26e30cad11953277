#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "doctest.h"
#include "spg/binary_io.hpp"
#include "spg/pipeline.hpp"
#include "spg/report.hpp"
#include "spg/verify.hpp"

using namespace spg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("spg-test-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig small_blobs(std::uint64_t seed = 1) {
  auto c = load_run_config(parse_config("[task]\nkind = classification\ntrain = 400\nval = 200\ntest = 300\n"
                                        "[baseline]\nepochs = 4\n[train]\nepochs = 5\ncold_start_epochs = 2\n"),
                           RunMode::retrain);
  c.train.seed = seed;
  return c;
}

void write_summary(const fs::path& dir, double base, double spg) {
  fs::create_directories(dir);
  nlohmann::json j{{"schema", 1}, {"baseline", {{"accuracy", base}}}, {"spg", {{"accuracy", spg}}}};
  std::ofstream(dir / "summary.json") << j.dump();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int broken_transition(int o, bool correct) { return o == -1 && !correct ? -1 : traj::step_observed(o, correct); }

}  // namespace

TEST_CASE("verify passes on this build and catches a perturbed transition") {
  const auto good = run_verify(3);
  CHECK(good.passed());
  bool gap = false;
  for (const auto& d : good.divergences) gap = gap || d == "T=2 pattern (1,0): t=2 M=0 r=1";
  CHECK(gap);
  CHECK(good.trace_records.size() == 2 + 4 + 8);

  const auto bad = run_verify(3, broken_transition);
  CHECK_FALSE(bad.passed());
  CHECK(bad.suites.front().name == "truth-table");
  CHECK_FALSE(bad.suites.front().passed);
  CHECK_THROWS_AS(run_verify(0), std::invalid_argument);
  CHECK_THROWS_AS(run_verify(9), std::invalid_argument);
}

TEST_CASE("report statistics match the closed form") {
  const auto root = scratch("report");
  // accuracies 0.90, 0.92, 0.97 -> mean 0.93, sample variance ((-.03)^2 + (-.01)^2 + .04^2)/2 = 0.0013
  write_summary(root / "seed-1", 0.90, 0.91);
  write_summary(root / "seed-2", 0.92, 0.92);
  write_summary(root / "seed-3", 0.97, 0.99);
  const std::vector<fs::path> dirs{root};
  const auto rep = build_report(dirs);
  REQUIRE(rep.runs.size() == 3);
  REQUIRE(rep.rows.size() == 1);
  const auto& row = rep.rows[0];
  CHECK(row.metric == "accuracy");
  CHECK(row.baseline->mean == doctest::Approx(0.93).epsilon(1e-12));
  CHECK(*row.baseline->stddev == doctest::Approx(std::sqrt(0.0013)).epsilon(1e-12));
  // gains 0.01, 0.00, 0.02 -> mean 0.01, sample std 0.01
  CHECK(row.gain->mean == doctest::Approx(0.01).epsilon(1e-9));
  CHECK(*row.gain->stddev == doctest::Approx(0.01).epsilon(1e-9));
  CHECK(rep.missing.empty());
}

TEST_CASE("report edge cases") {
  const auto root = scratch("report-edges");
  write_summary(root / "only", 0.8, 0.85);
  const std::vector<fs::path> single{root / "only"};
  const auto one = build_report(single);
  CHECK(one.rows[0].baseline->mean == 0.8);
  CHECK(one.rows[0].spg->mean == 0.85);
  CHECK_FALSE(one.rows[0].spg->stddev.has_value());

  fs::create_directories(root / "partial" / "seed-1");
  write_summary(root / "partial" / "seed-2", 0.5, 0.5);
  const std::vector<fs::path> partial{root / "partial"};
  const auto p = build_report(partial);
  CHECK(p.runs.size() == 1);
  REQUIRE(p.missing.size() == 1);
  CHECK(p.missing[0].find("seed-1") != std::string::npos);

  fs::create_directories(root / "empty");
  const std::vector<fs::path> empty{root / "empty"};
  CHECK_THROWS_AS(build_report(empty), ReportError);
}

TEST_CASE("retrain with cold start only leaves accuracy unchanged") {
  auto config = small_blobs();
  config.train.epochs = config.train.cold_start_epochs;
  const auto train = generate(config.task, Split::train), val = generate(config.task, Split::val),
             test = generate(config.task, Split::test);
  auto model = baseline_finetune(config, train, val);
  const auto r = retrain(model, config, train, val, test);
  CHECK(r.spg->accuracy == r.baseline.accuracy);
  CHECK(r.spg->loss == r.baseline.loss);
  CHECK(r.attach->identical);
}

TEST_CASE("retrain with zero learning rate is the baseline") {
  auto config = small_blobs();
  config.train.lr = 0.0;
  const auto train = generate(config.task, Split::train), val = generate(config.task, Split::val),
             test = generate(config.task, Split::test);
  auto model = baseline_finetune(config, train, val);
  std::vector<double> before;
  for (auto& p : model.parameters()) before.insert(before.end(), p.tensor->data().begin(), p.tensor->data().end());
  const auto r = retrain(model, config, train, val, test);
  std::vector<double> after;
  for (auto& p : model.parameters()) after.insert(after.end(), p.tensor->data().begin(), p.tensor->data().end());
  CHECK(before == after);
  CHECK(r.spg->accuracy == r.baseline.accuracy);
}

TEST_CASE("retrain rejects a chain of the wrong width") {
  auto config = small_blobs();
  const auto train = generate(config.task, Split::train), val = generate(config.task, Split::val);
  auto model = baseline_finetune(config, train, val);
  config.trp.width = config.width + 1;
  CHECK_THROWS_AS(retrain(model, config, train, val, val), ConfigError);
}

TEST_CASE("run directories are complete, reproducible and reusable") {
  const auto a = scratch("run-a"), b = scratch("run-b");
  const auto config = small_blobs(5);
  const auto ra = run_retrain(config, RunMode::retrain, a);
  run_retrain(config, RunMode::retrain, b);
  for (const char* f : {"config.ini", "baseline.ckpt", "baseline.jsonl", "spg.ckpt", "stripped.ckpt", "metrics.jsonl",
                        "summary.json", "timing.jsonl"})
    CHECK_MESSAGE(fs::exists(a / f), f);
  for (const char* f : {"baseline.ckpt", "spg.ckpt", "stripped.ckpt", "metrics.jsonl", "baseline.jsonl", "summary.json"})
    CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);

  // the echoed config reproduces the run
  const auto echoed = load_run_config(read_config_file(a / "config.ini"), RunMode::retrain);
  CHECK(echo_config(echoed) == echo_config(config));

  // second run in the same directory reuses the baseline and lands on the same bytes
  const auto stripped = slurp(a / "stripped.ckpt");
  const auto again = run_retrain(config, RunMode::retrain, a);
  CHECK(slurp(a / "stripped.ckpt") == stripped);
  CHECK(again.spg->accuracy == ra.spg->accuracy);

  // one record per (stage, epoch, split)
  std::ifstream metrics(a / "metrics.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(metrics, line); ++lines) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["schema"] == kMetricsSchema);
    CHECK(j["epoch"] == lines / 2);
    CHECK(j["split"] == (lines % 2 == 0 ? "train" : "val"));
  }
  CHECK(lines == 2 * config.train.epochs);

  const auto e1 = evaluate_checkpoint(a / "stripped.ckpt", Split::test);
  const auto e2 = evaluate_checkpoint(a / "stripped.ckpt", Split::test);
  CHECK(e1.accuracy == e2.accuracy);
  CHECK(e1.accuracy == ra.spg->accuracy);
  CHECK(evaluate_checkpoint(a / "baseline.ckpt", Split::test).accuracy == ra.baseline.accuracy);
  CHECK_THROWS_AS(parse_split("holdout"), std::invalid_argument);
}
