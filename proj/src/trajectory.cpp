#include "spg/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace spg::traj {

int step_observed(int observed, bool correct) { return observed * (observed + (correct ? 1 : 0)) - 1; }

int state_reward(int observed) { return observed >= 0 ? 1 : 0; }

ReturnWeights ReturnWeights::recipe_default() { return ReturnWeights{{0.4, 0.2, 0.1}}; }

ReturnWeights ReturnWeights::extended_to(std::size_t depth) const {
  ReturnWeights out = *this;
  while (out.lambdas.size() < depth) out.lambdas.push_back(out.lambdas.empty() ? 1.0 : out.lambdas.back() * 0.5);
  return out;
}

void ReturnWeights::validate() const {
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    if (!std::isfinite(lambdas[k]) || lambdas[k] < 0.0) {
      throw std::invalid_argument(fmt::format("return weight lambda_{} = {} must be finite and non-negative", k + 1, lambdas[k]));
    }
  }
}

double ReturnWeights::weight(std::size_t t) const {
  if (t == 0) return 1.0;
  if (t > lambdas.size()) throw std::out_of_range(fmt::format("no return weight for depth {} ({} provided)", t, lambdas.size()));
  return lambdas[t - 1];
}

double padded_return(std::span<const int> rewards) {
  if (rewards.empty()) throw std::invalid_argument("padded_return: empty reward sequence");
  double total = 0.0;
  for (int r : rewards) total += r;
  return total * rewards.back();
}

double padded_return(std::span<const int> rewards, const ReturnWeights& weights) {
  if (rewards.empty()) throw std::invalid_argument("padded_return: empty reward sequence");
  double total = 0.0;
  for (std::size_t t = 0; t < rewards.size(); ++t) total += weights.weight(t) * rewards[t];
  return total * rewards.back();
}

PolicyReadout policy_readout(std::span<const double> probabilities, std::size_t target_class) {
  if (target_class >= probabilities.size()) {
    throw std::out_of_range(fmt::format("policy_readout: class {} outside [0,{})", target_class, probabilities.size()));
  }
  const double p = probabilities[target_class];
  return {p, 1.0 - p};
}

MaskSeries::MaskSeries(std::size_t units, std::size_t depth)
    : units_(units), depth_(depth), bits_((depth + 1) * units, 0) {}

double MaskSeries::survival(std::size_t t) const {
  if (units_ == 0) return 0.0;
  const auto r = row(t);
  return static_cast<double>(std::count(r.begin(), r.end(), std::uint8_t{1})) / static_cast<double>(units_);
}

MaskSeries mask_series(std::span<const std::uint8_t> correct, std::size_t units, std::size_t depth) {
  if (correct.size() != units * depth) {
    throw std::invalid_argument(
        fmt::format("mask_series: {} correctness bits do not match {} units x {} depths", correct.size(), units, depth));
  }
  MaskSeries masks(units, depth);
  for (std::size_t i = 0; i < units; ++i) {
    masks.at(0, i) = 1;
    for (std::size_t t = 0; t < depth; ++t) {
      masks.at(t + 1, i) = masks.at(t, i) && correct[i * depth + t] ? 1 : 0;
    }
  }
  return masks;
}

std::size_t step_length(const MaskSeries& masks, std::size_t unit) {
  std::size_t total = 1;
  for (std::size_t t = 1; t <= masks.depth(); ++t) total += masks.at(t, unit);
  return std::min(total, std::max<std::size_t>(masks.depth(), 1));
}

std::vector<std::size_t> step_lengths(const MaskSeries& masks) {
  std::vector<std::size_t> out(masks.units());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = step_length(masks, i);
  return out;
}

std::vector<double> grouped_scale(std::size_t m, std::span<const std::size_t> lengths) {
  if (m == 0) throw std::invalid_argument("grouped_scale: effective batch size must be positive");
  std::vector<double> out(lengths.size());
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] == 0) throw std::invalid_argument(fmt::format("grouped_scale: unit {} has zero step length", i));
    out[i] = inv_m * (1.0 / static_cast<double>(lengths[i]));
  }
  return out;
}

EffectiveBatch effective_batch_size(TaskKind kind, const BatchGeometry& g) {
  if (g.batch == 0 || g.height == 0 || g.width == 0 || g.sequence_length == 0) {
    throw std::invalid_argument("effective_batch_size: geometry must be positive");
  }
  switch (kind) {
    case TaskKind::classification: return {g.batch, {g.batch}};
    case TaskKind::segmentation: return {g.batch * g.height * g.width * 2, {g.batch, g.height, g.width, 2}};
    case TaskKind::language_model: return {g.batch * g.sequence_length, {g.batch, g.sequence_length}};
  }
  throw std::invalid_argument("effective_batch_size: unknown task kind");
}

EffectiveBatch effective_batch_size(std::string_view kind, const BatchGeometry& geometry) {
  return effective_batch_size(parse_task_kind(kind), geometry);
}

EnumerationReport enumerate_nonzero_returns(std::size_t depth, const ReturnWeights& weights, TransitionFn transition) {
  if (depth < 1 || depth > 8) throw std::out_of_range(fmt::format("enumerate_nonzero_returns: T = {} outside [1,8]", depth));
  weights.validate();
  if (weights.lambdas.size() < depth) {
    throw std::invalid_argument(fmt::format("enumerate_nonzero_returns: {} return weights for depth {}", weights.lambdas.size(), depth));
  }

  EnumerationReport report;
  report.depth = depth;
  const std::size_t patterns = std::size_t{1} << depth;
  for (std::size_t p = 0; p < patterns; ++p) {
    EpisodeTrace tr;
    for (std::size_t t = 0; t < depth; ++t) tr.pattern.push_back(static_cast<std::uint8_t>((p >> (depth - 1 - t)) & 1));

    tr.observed.push_back(kContinue);
    for (std::size_t t = 0; t < depth; ++t) tr.observed.push_back(transition(tr.observed.back(), tr.pattern[t] != 0));
    for (int o : tr.observed) {
      if (o < kDummy || o > kContinue) ++report.invariant_violations;
      tr.rewards.push_back(state_reward(o));
    }
    const auto masks = mask_series(tr.pattern, 1, depth);
    for (std::size_t t = 0; t <= depth; ++t) tr.masks.push_back(masks.at(t, 0));
    tr.step_length = step_length(masks, 0);

    tr.return_unweighted = padded_return(tr.rewards);
    tr.return_weighted = padded_return(tr.rewards, weights);
    tr.nonzero_return = tr.return_unweighted != 0.0;
    if (tr.nonzero_return != (tr.return_weighted != 0.0)) ++report.invariant_violations;

    // |tau| = T + 1 padded states: prefix a_0..a_{T-2} all continue, o_T >= 0.
    const bool prefix_continue = std::all_of(tr.pattern.begin(), tr.pattern.end() - 1, [](auto c) { return c == 1; });
    tr.closed_form_member = prefix_continue && tr.observed[depth] >= 0;

    for (std::size_t t = 0; t + 1 <= depth; ++t) {
      if (tr.observed[t] == kDummy && tr.observed[t + 1] == kTerminated) tr.resurrected = true;
    }
    for (std::size_t t = 0; t <= depth; ++t) {
      if (tr.masks[t] != tr.rewards[t]) tr.mask_reward_divergences.push_back(t);
      if (tr.masks[t] == 1 && tr.rewards[t] != 1) ++report.invariant_violations;
    }

    report.nonzero_count += tr.nonzero_return ? 1 : 0;
    report.closed_form_count += tr.closed_form_member ? 1 : 0;
    if (tr.nonzero_return != tr.closed_form_member) {
      report.set_differences.push_back(p);
      if (!tr.resurrected) report.unexplained_differences.push_back(p);
    }
    report.traces.push_back(std::move(tr));
  }
  return report;
}

}  // namespace spg::traj
