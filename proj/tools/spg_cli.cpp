// spg: verification, baseline training, SPG retraining, NAS mode and reports.
//
// Exit codes: 0 ok, 1 verification failed, 2 bad configuration or arguments,
// 3 file or format error, 4 training diverged.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "spg/binary_io.hpp"
#include "spg/config.hpp"
#include "spg/pipeline.hpp"
#include "spg/report.hpp"
#include "spg/verify.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kFailed = 1, kConfig = 2, kIo = 3, kDiverged = 4 };

fs::path output_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SPG_OUT"); env && *env) return env;
  return "runs";
}

int cmd_verify(std::size_t max_t, const fs::path& out, bool quiet) {
  const auto report = spg::run_verify(max_t);
  fs::create_directories(out);
  std::string lines;
  for (const auto& r : report.trace_records) lines += r + '\n';
  spg::io::write_file(out / "verify.jsonl", std::span(reinterpret_cast<const std::uint8_t*>(lines.data()), lines.size()));
  if (!quiet) {
    spg::print_verify_table(std::cout, report);
    std::cout << fmt::format("traces: {}\n", (out / "verify.jsonl").string());
  }
  std::cout << (report.passed() ? "verify: all suites passed\n" : "verify: FAILED\n");
  return report.passed() ? kOk : kFailed;
}

int cmd_train(spg::RunMode mode, const std::string& config_path, const fs::path& out, std::vector<std::uint64_t> seeds,
              bool quiet) {
  const auto file = spg::read_config_file(config_path);
  const auto base = spg::load_run_config(file, mode);
  if (seeds.empty()) seeds.push_back(base.train.seed);
  spg::RunOptions options;
  if (!quiet) options.progress = [](const std::string& line) { std::cout << line << '\n' << std::flush; };
  for (auto seed : seeds) {
    auto config = base;
    config.train.seed = seed;
    const auto dir = out / fmt::format("seed-{}", seed);
    const auto r = mode == spg::RunMode::baseline ? spg::run_baseline(config, dir, options)
                                                  : spg::run_retrain(config, mode, dir, options);
    if (r.spg) {
      std::cout << fmt::format("seed {}: baseline acc {:.4f}, stripped acc {:.4f} ({:+.2f} pp){}\n", seed,
                               r.baseline.accuracy, r.spg->accuracy, 100.0 * (r.spg->accuracy - r.baseline.accuracy),
                               r.survival_monotone ? "" : ", survival NOT monotone");
      if (mode == spg::RunMode::nas && r.attach)
        std::cout << fmt::format("seed {}: attach-time accuracy {}\n", seed,
                                 r.attach->identical ? "matches the base network" : "DIFFERS from the base network");
    } else {
      std::cout << fmt::format("seed {}: baseline acc {:.4f}\n", seed, r.baseline.accuracy);
    }
    std::cout << fmt::format("seed {}: outputs in {}\n", seed, dir.string());
  }
  return kOk;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out_flag) {
  std::vector<fs::path> paths(dirs.begin(), dirs.end());
  const auto report = spg::build_report(paths);
  spg::print_report(std::cout, report);
  const fs::path out = out_flag.empty() ? paths.front() : fs::path(out_flag);
  fs::create_directories(out);
  const auto text = spg::report_json(report).dump(2) + '\n';
  spg::io::write_file(out / "report.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential policy gradient retraining with temporary replica modules"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "spg 1.0");

  std::string config, out;
  std::vector<std::uint64_t> seeds;
  std::size_t max_t = 3;
  bool quiet = false;
  std::vector<std::string> report_dirs;

  auto* verify = app.add_subcommand("verify", "Run the property suites; nonzero exit on any failure");
  verify->add_option("--max-t", max_t, "Largest chain depth to enumerate (1-8)")->check(CLI::Range(1, 8));
  verify->add_option("--out", out, "Directory for verify.jsonl (default $SPG_OUT or ./runs)");
  verify->add_flag("--quiet", quiet, "Only print the verdict");

  std::vector<std::pair<spg::RunMode, CLI::App*>> trainers;
  for (auto [mode, name, help] : {std::tuple{spg::RunMode::baseline, "baseline", "Train the base network"},
                                  std::tuple{spg::RunMode::retrain, "retrain", "SPG-retrain with dropout replicas"},
                                  std::tuple{spg::RunMode::nas, "nas", "SPG-retrain with zero-init depth blocks"}}) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "Run configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Output root; runs go to OUT/seed-N (default $SPG_OUT or ./runs)");
    sub->add_option("--seed", seeds, "Training seed; repeat for several runs")->take_all();
    sub->add_flag("--quiet", quiet, "No per-epoch progress");
    trainers.emplace_back(mode, sub);
  }

  auto* report = app.add_subcommand("report", "Aggregate summary.json files over seeds");
  report->add_option("dirs", report_dirs, "Run directories or parents of run directories")->required();
  report->add_option("--out", out, "Where to write report.json (default: first directory)");
  report->add_flag("--quiet", quiet, "Accepted for symmetry; the table is always printed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*verify) return cmd_verify(max_t, output_root(out), quiet);
    if (*report) return cmd_report(report_dirs, out);
    for (auto [mode, sub] : trainers)
      if (*sub) return cmd_train(mode, config, output_root(out), seeds, quiet);
  } catch (const spg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kConfig;
  } catch (const spg::io::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const spg::ReportError& e) {
    std::cerr << "report error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const spg::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kFailed;
}
