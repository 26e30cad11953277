#pragma once

// Central finite-difference oracle, independent of the tape's
// backward pass: it only ever evaluates the forward loss.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "spg/tensor.hpp"

namespace spg {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

/// Relative error; magnitudes below 1e-4 are compared on an absolute scale
/// of 1e-4 so round-off in near-zero components does not dominate.
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) / scale;
}

/// `loss` must rebuild the forward pass from the current parameter values and
/// return the scalar loss. `gradients` must run forward+backward once, leaving
/// d(loss)/d(param) in each tensor's grad buffer.
inline GradCheckResult check_gradients(const std::vector<ad::Tensor*>& params, const std::function<double()>& loss,
                                       const std::function<void()>& gradients, double step = 1e-5) {
  for (auto* p : params) p->zero_grad();
  gradients();
  std::vector<std::vector<double>> analytic;
  for (auto* p : params) analytic.emplace_back(p->grad().begin(), p->grad().end());

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k]->data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + step;
      const double plus = loss();
      data[i] = saved - step;
      const double minus = loss();
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[k][i], numeric));
      result.max_abs_error = std::max(result.max_abs_error, std::abs(analytic[k][i] - numeric));
      ++result.checked;
    }
  }
  return result;
}

}  // namespace spg
