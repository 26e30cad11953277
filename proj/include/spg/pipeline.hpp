#pragma once

// End-to-end runs: baseline fine-tuning, SPG retraining (HPO or NAS chain),
// checkpoint evaluation. Every run writes into one directory:
//
//   config.ini           echoed configuration (reproduces the run)
//   baseline.ckpt        baseline network
//   baseline.jsonl       per-epoch baseline metrics
//   spg.ckpt             model with its chain and trainer state
//   stripped.ckpt        chain removed; the deployable model
//   metrics.jsonl        per-epoch retraining metrics
//   summary.json         final baseline vs stripped test metrics
//   timing.jsonl         wall-clock per stage (not reproducible by design)
//
// Metrics records carry "schema": 1 and one record per (stage, epoch, split).

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spg/checkpoint.hpp"
#include "spg/config.hpp"
#include "spg/trainer.hpp"

namespace spg {

inline constexpr int kMetricsSchema = 1;

struct RunOptions {
  /// Receives one line per epoch; null for silence.
  std::function<void(const std::string&)> progress;
};

struct AttachCheck {
  double base_accuracy = 0.0;
  std::vector<double> depth_accuracy;  // π_0..π_T right after attach
  bool identical = false;              // every π_t accuracy equals the base accuracy
};

struct RunResult {
  EvalMetrics baseline;  // test split
  std::optional<EvalMetrics> spg;  // stripped model, test split
  std::optional<AttachCheck> attach;
  bool survival_monotone = true;
  std::filesystem::path dir;
};

nlohmann::json to_json(const EvalMetrics& m);

/// Trains the bare base network with cross-entropy from its seeded init.
/// Non-finite loss raises DivergenceError.
SpgModel baseline_finetune(const RunConfig& config, const Dataset& train, const Dataset& val,
                           std::vector<nlohmann::json>* records = nullptr, const RunOptions& options = {});

/// Baseline only: writes config.ini, baseline.ckpt, baseline.jsonl and summary.json.
RunResult run_baseline(const RunConfig& config, const std::filesystem::path& dir, const RunOptions& options = {});

/// Baseline (reused from `dir` when its echoed config matches), then chain
/// attach, cold start, surrogate training, strip and evaluation.
RunResult run_retrain(const RunConfig& config, RunMode mode, const std::filesystem::path& dir,
                      const RunOptions& options = {});

/// Attaches the configured chain to a trained base network, cold-starts and
/// trains it, then strips it and evaluates on `test`. `on_trained` sees the
/// model (chain still attached) and the final trainer state before the strip.
/// A chain whose width or class count disagrees with the network is rejected
/// with ConfigError.
RunResult retrain(SpgModel& model, const RunConfig& config, const Dataset& train, const Dataset& val,
                  const Dataset& test, std::vector<nlohmann::json>* records = nullptr, const RunOptions& options = {},
                  const std::function<void(SpgModel&, const TrainerState&)>& on_trained = {});

/// Loads a checkpoint, regenerates the split from its echoed configuration
/// and evaluates the deployed prediction in eval mode.
EvalMetrics evaluate_checkpoint(const std::filesystem::path& checkpoint, Split split);

/// Config text that determines the baseline (task, model, baseline, seed).
std::string baseline_config_text(const RunConfig& config);

}  // namespace spg
