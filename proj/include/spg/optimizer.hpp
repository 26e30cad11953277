#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "spg/tensor.hpp"

namespace spg::ad {

enum class OptimizerKind : std::uint32_t { sgd = 0, adamw = 1 };

OptimizerKind parse_optimizer_kind(std::string_view name);
std::string_view to_string(OptimizerKind kind);

struct OptimizerHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Optimizer state: hyperparameters plus per-parameter first/second moments.
/// Moments are empty for plain SGD.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adamw;
  OptimizerHyper hyper;
  std::uint64_t steps = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  /// Zero moments shaped like `params`.
  void initialize(std::span<Tensor* const> params);
  bool initialized() const noexcept { return initialized_; }

 private:
  bool initialized_ = false;
};

/// One update from the gradients stored on `params`.
///
/// SGD: p <- p - lr * g. AdamW: bias-corrected moments with decoupled weight
/// decay. Moments update even when the effective learning rate is zero; a
/// zero rate leaves parameters bit-identical. Parameters without a gradient
/// buffer are treated as having a zero gradient.
void optimizer_step(OptimizerState& state, std::span<Tensor* const> params,
                    std::optional<double> lr_override = std::nullopt);

}  // namespace spg::ad
