#pragma once

// Small models and checks shared by the unit tests and the acceptance binary.

#include <vector>

#include "gradcheck.hpp"
#include "spg/tasks.hpp"
#include "spg/trainer.hpp"
#include "spg/trp_chain.hpp"
#include "spg/verify.hpp"

namespace spg::testing {

inline NetworkSpec toy_network(std::size_t features = 3, std::size_t width = 4, std::size_t classes = 3) {
  NetworkSpec s;
  s.kind = TaskKind::classification;
  s.input_dim = features;
  s.width = width;
  s.hidden_layers = 1;
  s.classes = classes;
  return s;
}

inline TrpConfig toy_chain(const NetworkSpec& net, std::size_t depth, TrpVariant variant = TrpVariant::hpo_dropout) {
  TrpConfig c;
  c.variant = variant;
  c.depth = depth;
  c.rates.assign(depth, 0.2);
  c.blocks = 1;
  c.width = net.width;
  c.classes = net.classes;
  return c;
}

/// Overwrites every temporary parameter with uniform values in [-scale, scale].
inline void perturb_temporary(SpgModel& model, RngStream& rng, double scale = 0.5) {
  for (auto& p : model.parameters())
    if (p.name.rfind("trp.", 0) == 0)
      for (auto& x : p.tensor->data()) x = scale * (2.0 * rng.uniform() - 1.0);
}

inline Batch toy_batch(std::size_t units, std::size_t features, std::size_t classes, RngStream& rng) {
  Batch b;
  b.samples = b.units = units;
  b.features = ad::Tensor(ad::Shape{units, features});
  for (auto& x : b.features.data()) x = 4.0 * rng.uniform() - 2.0;
  for (std::size_t i = 0; i < units; ++i) b.targets.push_back(rng.below(classes));
  return b;
}

using spg::surrogate_gradcheck;

}  // namespace spg::testing
