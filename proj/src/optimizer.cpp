#include "spg/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include <fmt/format.h>

namespace spg::ad {

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adamw") return OptimizerKind::adamw;
  throw std::invalid_argument(fmt::format("unknown optimizer '{}' (expected sgd or adamw)", name));
}

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adamw"; }

void OptimizerState::initialize(std::span<Tensor* const> params) {
  first_moment.clear();
  second_moment.clear();
  if (kind == OptimizerKind::adamw) {
    for (const Tensor* p : params) {
      first_moment.emplace_back(p->size(), 0.0);
      second_moment.emplace_back(p->size(), 0.0);
    }
  }
  steps = 0;
  initialized_ = true;
}

void optimizer_step(OptimizerState& state, std::span<Tensor* const> params, std::optional<double> lr_override) {
  if (!state.initialized()) state.initialize(params);
  const double lr = lr_override.value_or(state.hyper.lr);
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument(fmt::format("optimizer: invalid learning rate {}", lr));

  if (state.kind == OptimizerKind::sgd) {
    for (Tensor* p : params) {
      if (!p->has_grad() || lr == 0.0) continue;
      auto w = p->data();
      const auto g = p->grad();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
    }
    ++state.steps;
    return;
  }

  if (state.first_moment.size() != params.size()) {
    throw ShapeError(fmt::format("optimizer: state holds {} moment vectors for {} parameters", state.first_moment.size(),
                                 params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.first_moment[k].size() != params[k]->size() || state.second_moment[k].size() != params[k]->size()) {
      throw ShapeError(fmt::format("optimizer: moment size {} does not match parameter {} of shape {}",
                                   state.first_moment[k].size(), k, shape_string(params[k]->shape())));
    }
  }

  const auto& h = state.hyper;
  const auto step = static_cast<double>(state.steps + 1);
  const double correction1 = 1.0 - std::pow(h.beta1, step);
  const double correction2 = 1.0 - std::pow(h.beta2, step);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    auto w = p.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = p.has_grad() ? p.grad()[i] : 0.0;
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
      if (lr == 0.0) continue;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= lr * (m_hat / (std::sqrt(v_hat) + h.eps) + h.weight_decay * w[i]);
    }
  }
  ++state.steps;
}

}  // namespace spg::ad
