#pragma once

// Surrogate-loss training of a model with an attached replica chain, and
// plain cross-entropy training of a bare base network.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "spg/optimizer.hpp"
#include "spg/tasks.hpp"
#include "spg/trajectory.hpp"
#include "spg/trp_chain.hpp"

namespace spg {

/// Loss became non-finite during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ScheduleKind : std::uint32_t { constant = 0, step_decay = 1 };

ScheduleKind parse_schedule_kind(std::string_view name);
std::string_view to_string(ScheduleKind kind);

struct Schedule {
  ScheduleKind kind = ScheduleKind::constant;
  double factor = 0.5;
  std::size_t interval = 2;

  /// Rate for the k-th epoch after cold start: base * factor^(k / interval).
  double rate(double base, std::size_t k) const;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  /// Total epochs, cold-start epochs included.
  std::size_t epochs = 10;
  std::size_t cold_start_epochs = 0;
  double lr = 1e-3;
  Schedule schedule;
  ad::OptimizerKind optimizer = ad::OptimizerKind::adamw;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t batch_size = 32;
  traj::ReturnWeights weights = traj::ReturnWeights::recipe_default();
  traj::ReturnForm form = traj::ReturnForm::weighted;

  /// `depth` is the attached chain's T; the weighted form needs T lambdas.
  void validate(std::size_t depth) const;
  /// Cold start applies only to the adaptive optimizer.
  bool is_cold(std::size_t epoch) const;
  double lr_for_epoch(std::size_t epoch) const;
};

/// w_0..w_T: 1, then lambda_t (weighted) or 1 (unweighted).
std::vector<double> depth_weights(const traj::ReturnWeights& weights, traj::ReturnForm form, std::size_t depth);

/// Rollout of one output stream: logits π_0..π_T plus masks and step lengths
/// derived from their argmax correctness.
struct StreamEpisode {
  std::vector<ad::Var> logits;
  traj::MaskSeries masks;
  std::vector<std::size_t> lengths;
  std::vector<std::uint8_t> correct0;  // 1{argmax π_0 = c}
};

StreamEpisode build_episode(const ad::Tape& tape, const ChainOutput& out, std::span<const std::size_t> targets);

/// L = -(1/m) Σ_i (1/|τ_i|) Σ_t w_t [M_t]_i log softmax(π_t^(i))[c_i], summed
/// over streams. `m` is the total unit count across streams.
ad::Var surrogate_loss(ad::Tape& tape, std::span<const StreamEpisode> streams, std::span<const std::size_t> targets,
                       std::span<const double> weights, std::size_t m);

/// -mean_i log softmax(logits)[c_i].
ad::Var cross_entropy(ad::Tape& tape, ad::Var logits, std::span<const std::size_t> targets);

/// Running sums over the steps of one epoch.
struct EpochAccumulator {
  double loss_sum = 0.0;
  std::uint64_t steps = 0;
  std::uint64_t units = 0;    // stream-0 units
  std::uint64_t correct = 0;  // stream-0 π_0 hits
  std::uint64_t episodes = 0; // units across all streams
  double step_length_sum = 0.0;
  std::vector<double> survivors;  // Σ units with M_t = 1, t = 0..T

  void reset(std::size_t depth);
};

struct EpochStats {
  std::size_t epoch = 0;
  bool cold = false;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
  double mean_step_length = 0.0;
  std::vector<double> survival;  // t = 0..T
};

struct StepStats {
  double loss = 0.0;
  double lr = 0.0;
};

/// Everything needed to resume training bit-exactly.
struct TrainerState {
  std::size_t epoch = 0;
  std::size_t cursor = 0;  // next batch within the epoch
  ad::OptimizerState optimizer;
  RngStream dropout;
  EpochAccumulator acc;
};

/// Minibatch trainer. With a chain attached the loss is the surrogate; on a
/// bare network it is cross-entropy. The model must outlive the trainer.
class Trainer {
 public:
  Trainer(SpgModel& model, TrainConfig config, const Dataset& train);

  const TrainConfig& config() const noexcept { return config_; }
  std::size_t epoch() const noexcept { return state_.epoch; }
  std::size_t cursor() const noexcept { return state_.cursor; }
  std::size_t steps_per_epoch() const noexcept;
  bool done() const noexcept { return state_.epoch >= config_.epochs; }

  /// Trains on the next minibatch.
  StepStats step();
  /// Finishes the current epoch and returns its statistics.
  EpochStats run_epoch();

  const TrainerState& state() const noexcept { return state_; }
  void restore(TrainerState state);
  const ad::OptimizerState& optimizer() const noexcept { return state_.optimizer; }

 private:
  std::vector<std::size_t> permutation(std::size_t epoch) const;
  std::vector<ad::Tensor*> params();

  SpgModel& model_;
  TrainConfig config_;
  const Dataset& train_;
  std::vector<double> weights_;
  TrainerState state_;
  std::vector<std::size_t> order_;
  std::size_t order_epoch_ = static_cast<std::size_t>(-1);
};

/// Cold start: `epochs` zero-learning-rate passes that only warm the adaptive
/// moments. Parameters are left bit-identical.
void cold_start(SpgModel& model, ad::OptimizerState& optimizer, const Dataset& data, const TrainConfig& config,
                std::size_t epochs);

struct EvalMetrics {
  std::size_t units = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  /// segmentation: per-class IoU and their mean
  std::vector<double> iou;
  double mean_iou = 0.0;
  /// pattern language: accuracy on targets that were not substituted
  double clean_accuracy = 0.0;
  /// eval-mode chain diagnostics (empty on a bare network)
  std::vector<double> depth_accuracy;
  std::vector<double> survival;
  double mean_step_length = 0.0;
};

/// Eval-mode metrics of π_0 on stream 0 (the deployed, stripped prediction).
/// With `with_chain` and an attached chain, also reports π_t accuracy and
/// mask survival per depth.
EvalMetrics evaluate(SpgModel& model, const Dataset& data, bool with_chain = false, std::size_t batch_size = 512);

}  // namespace spg
