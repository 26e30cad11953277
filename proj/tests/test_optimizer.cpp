#include <cmath>

#include "doctest.h"
#include "spg/optimizer.hpp"

using namespace spg::ad;

namespace {

Tensor param(std::vector<double> values, std::vector<double> grad) {
  Tensor t = Tensor::vector(std::move(values));
  t.set_requires_grad(true);
  t.zero_grad();
  for (std::size_t i = 0; i < grad.size(); ++i) t.grad()[i] = grad[i];
  return t;
}

}  // namespace

TEST_CASE("plain SGD applies p - lr*g") {
  Tensor p = param({1.0}, {2.0});
  OptimizerState s;
  s.kind = OptimizerKind::sgd;
  s.hyper.lr = 0.1;
  std::vector<Tensor*> ps{&p};
  optimizer_step(s, ps);
  CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(s.steps == 1);
}

TEST_CASE("adaptive step with zero learning rate moves moments only") {
  Tensor p = param({1.0, -0.0, 3.5}, {0.5, -2.0, 0.0});
  const Tensor before = p;
  OptimizerState s;
  s.hyper.lr = 1e-2;
  s.hyper.weight_decay = 0.05;
  std::vector<Tensor*> ps{&p};
  for (int i = 0; i < 25; ++i) optimizer_step(s, ps, 0.0);
  CHECK(p.same_bits(before));
  CHECK(s.first_moment[0][0] != 0.0);
  CHECK(s.second_moment[0][1] != 0.0);
  CHECK(s.steps == 25);
}

TEST_CASE("two adaptive steps with fixed gradient follow the bias-corrected recurrence") {
  // With a constant gradient g, bias correction makes m_hat = g and
  // v_hat = g^2 at every step, so each step moves by lr*(g/(|g|+eps) + wd*p).
  const double g = 2.0, lr = 0.1, eps = 1e-8, wd = 0.01;
  Tensor p = param({1.0}, {g});
  OptimizerState s;
  s.hyper = OptimizerHyper{lr, 0.9, 0.999, eps, wd};
  std::vector<Tensor*> ps{&p};
  optimizer_step(s, ps);
  optimizer_step(s, ps);
  const double step = g / (g + eps);
  double expected = 1.0;
  expected -= lr * (step + wd * expected);
  expected -= lr * (step + wd * expected);
  CHECK(p[0] == doctest::Approx(expected).epsilon(1e-13));
  // first moment after two steps: 0.1*g*(1 + 0.9)
  CHECK(s.first_moment[0][0] == doctest::Approx(0.38).epsilon(1e-14));
  CHECK(s.second_moment[0][0] == doctest::Approx(0.001 * 4.0 * (1 + 0.999)).epsilon(1e-14));
}

TEST_CASE("moment shape mismatch is rejected") {
  Tensor a = param({1.0, 2.0}, {1.0, 1.0});
  Tensor b = param({1.0, 2.0, 3.0}, {1.0, 1.0, 1.0});
  OptimizerState s;
  std::vector<Tensor*> first{&a};
  optimizer_step(s, first);
  std::vector<Tensor*> other{&b};
  CHECK_THROWS_AS(optimizer_step(s, other), ShapeError);
}
