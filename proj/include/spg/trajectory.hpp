#pragma once

// Padded-trajectory calculus: observed-state dynamics, rewards, returns,
// positional masks and the grouped grad-log-prob scaling. Everything here is a
// pure function of its inputs.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "spg/task_kind.hpp"

namespace spg::traj {

/// Observed state values: 1 continue, 0 normal termination, -1 dummy.
inline constexpr int kContinue = 1;
inline constexpr int kTerminated = 0;
inline constexpr int kDummy = -1;

/// o' = o * (o + correct) - 1.
int step_observed(int observed, bool correct);

/// 1 if o >= 0, else 0.
int state_reward(int observed);

/// Per-depth return weights: w_0 = 1 implicitly, then lambda_1..lambda_k.
struct ReturnWeights {
  std::vector<double> lambdas;

  /// (0.4, 0.2, 0.1).
  static ReturnWeights recipe_default();
  /// Pads with successive halvings of the last weight up to `depth` entries.
  ReturnWeights extended_to(std::size_t depth) const;

  /// Throws unless all weights are finite and non-negative.
  void validate() const;
  /// w_t; throws std::out_of_range when lambda_t is not provided.
  double weight(std::size_t t) const;
};

enum class ReturnForm : std::uint32_t { weighted = 0, unweighted = 1 };

/// (r_0 + ... + r_{n-1}) * r_{n-1}.
double padded_return(std::span<const int> rewards);
/// (r_0 + lambda_1 r_1 + ... + lambda_{n-1} r_{n-1}) * r_{n-1}.
double padded_return(std::span<const int> rewards, const ReturnWeights& weights);

struct PolicyReadout {
  double p_continue = 0.0;
  double p_stop = 0.0;
};

/// ([pi]_c, 1 - [pi]_c) for a normalised distribution pi.
PolicyReadout policy_readout(std::span<const double> probabilities, std::size_t target_class);

/// Binary masks M_0..M_T over m units, stored depth-major.
class MaskSeries {
 public:
  MaskSeries() = default;
  MaskSeries(std::size_t units, std::size_t depth);

  std::size_t units() const noexcept { return units_; }
  std::size_t depth() const noexcept { return depth_; }
  std::uint8_t at(std::size_t t, std::size_t unit) const { return bits_[t * units_ + unit]; }
  std::uint8_t& at(std::size_t t, std::size_t unit) { return bits_[t * units_ + unit]; }
  std::span<const std::uint8_t> row(std::size_t t) const { return {bits_.data() + t * units_, units_}; }
  /// Fraction of units with M_t = 1.
  double survival(std::size_t t) const;

 private:
  std::size_t units_ = 0;
  std::size_t depth_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// `correct` is unit-major, m x T: correct[i*T + t] = 1{argmax pi_t^(i) = c_i}.
/// M_0 = 1 and M_{t+1} = M_t * correct_t.
MaskSeries mask_series(std::span<const std::uint8_t> correct, std::size_t units, std::size_t depth);

/// |tau^(i)| = min(1 + sum_{t=1..T} M_t, T), never below 1.
std::size_t step_length(const MaskSeries& masks, std::size_t unit);
std::vector<std::size_t> step_lengths(const MaskSeries& masks);

/// (1/m) * (1/|tau^(i)|) per unit.
std::vector<double> grouped_scale(std::size_t m, std::span<const std::size_t> lengths);

struct BatchGeometry {
  std::size_t batch = 0;           // N
  std::size_t height = 1;          // H (segmentation)
  std::size_t width = 1;           // W (segmentation)
  std::size_t sequence_length = 1; // L (language modelling)
};

struct EffectiveBatch {
  std::size_t units = 0;
  std::vector<std::size_t> layout;
};

/// classification N; segmentation N*H*W*2 (standard and auxiliary output);
/// language modelling N*L.
EffectiveBatch effective_batch_size(TaskKind kind, const BatchGeometry& geometry);
EffectiveBatch effective_batch_size(std::string_view kind, const BatchGeometry& geometry);

using TransitionFn = int (*)(int, bool);

/// One correctness pattern simulated through the padded dynamics.
struct EpisodeTrace {
  std::vector<std::uint8_t> pattern;  // c_0..c_{T-1}
  std::vector<int> observed;          // o_0..o_T
  std::vector<int> rewards;           // r_0..r_T
  std::vector<std::uint8_t> masks;    // M_0..M_T
  double return_weighted = 0.0;
  double return_unweighted = 0.0;
  std::size_t step_length = 0;
  bool nonzero_return = false;
  /// Prefix c_0..c_{T-2} all "continue" and o_T >= 0.
  bool closed_form_member = false;
  /// Some o_t = -1 is followed by o_{t+1} = 0.
  bool resurrected = false;
  std::vector<std::size_t> mask_reward_divergences;  // t with M_t != r_t
};

struct EnumerationReport {
  std::size_t depth = 0;
  std::vector<EpisodeTrace> traces;
  std::size_t nonzero_count = 0;
  std::size_t closed_form_count = 0;
  /// Patterns in exactly one of the two sets.
  std::vector<std::size_t> set_differences;
  /// Differences that are not explained by a resurrection transition.
  std::vector<std::size_t> unexplained_differences;
  /// Any (t, pattern) with M_t = 1 but r_t = 0, or o outside {-1,0,1}.
  std::size_t invariant_violations = 0;

  bool exact_identity() const noexcept { return set_differences.empty(); }
  bool identity_modulo_resurrection() const noexcept { return unexplained_differences.empty(); }
};

/// Exhaustive 2^T enumeration for 1 <= T <= 8. `weights` must cover depth T.
EnumerationReport enumerate_nonzero_returns(std::size_t depth, const ReturnWeights& weights,
                                            TransitionFn transition = step_observed);

}  // namespace spg::traj
