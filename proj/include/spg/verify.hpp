#pragma once

// Self-checks run by `spg verify`: exhaustive trajectory suites, gradient
// checks, zero-init identity and parameter accounting.

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "spg/gradcheck.hpp"
#include "spg/trajectory.hpp"

namespace spg {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  std::size_t max_depth = 0;
  std::vector<SuiteResult> suites;
  /// One JSON object per (T, pattern), serialized.
  std::vector<std::string> trace_records;
  /// Human-readable (T, pattern, t) lines where M_t != r_t.
  std::vector<std::string> divergences;

  bool passed() const noexcept;
};

/// Runs every suite for T = 1..max_depth (1 <= max_depth <= 8). The
/// transition is injectable so a mutated rule can be shown to fail.
VerifyReport run_verify(std::size_t max_depth, traj::TransitionFn transition = traj::step_observed);

void print_verify_table(std::ostream& out, const VerifyReport& report);

/// Finite differences against the surrogate gradient of a 2-module HPO chain
/// on a toy classifier, with masks and dropout held fixed.
GradCheckResult surrogate_gradcheck(std::uint64_t seed);

/// Finite differences against the cross-entropy gradient of a small pattern
/// language model (embedding path).
GradCheckResult language_model_gradcheck(std::uint64_t seed);

}  // namespace spg
