#include <cmath>
#include <numeric>
#include <string>

#include "doctest.h"
#include "gradcheck.hpp"
#include "spg/tape.hpp"

using spg::RngStream;
using spg::ad::Shape;
using spg::ad::Tape;
using spg::ad::Tensor;
using spg::ad::Var;

namespace {

Tensor random_tensor(Shape shape, RngStream& rng, bool requires_grad = true) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = -2.0 + 4.0 * rng.uniform();
  t.set_requires_grad(requires_grad);
  return t;
}

// Contract an arbitrary-shaped output with fixed random weights so every
// output element influences the scalar under test.
Var contract(Tape& tape, Var out, const Tensor& weights) {
  return tape.sum(tape.mul(out, tape.constant(weights)));
}

double max_rel_error_for(std::vector<Tensor*> params, const std::function<Var(Tape&)>& build) {
  auto loss = [&] {
    Tape tape;
    return tape.value(build(tape)).item();
  };
  auto grads = [&] {
    Tape tape;
    tape.backward(build(tape));
  };
  return spg::testing::check_gradients(params, loss, grads).max_rel_error;
}

}  // namespace

TEST_CASE("matmul with identity returns the left operand") {
  Tape tape;
  auto a = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  auto eye = tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  const auto& out = tape.value(tape.matmul(a, eye));
  CHECK(out.shape() == Shape{2, 2});
  CHECK(out.same_bits(Tensor::matrix(2, 2, {1, 2, 3, 4})));
}

TEST_CASE("log_softmax of a constant row is uniform") {
  Tape tape;
  const auto& out = tape.value(tape.log_softmax(tape.constant(Tensor::vector({0, 0, 0}))));
  for (auto v : out.data()) CHECK(v == doctest::Approx(-std::log(3.0)).epsilon(1e-15));
}

TEST_CASE("gather selects the class entry") {
  Tape tape;
  std::vector<std::size_t> cls{2};
  auto x = tape.constant(Tensor::matrix(1, 3, {0.5, -1.5, 7.25}));
  CHECK(tape.value(tape.gather(x, cls)).item() == 7.25);
}

TEST_CASE("shape mismatch names the primitive and both shapes") {
  Tape tape;
  auto a = tape.constant(Tensor(Shape{2, 3}));
  auto b = tape.constant(Tensor(Shape{4, 5}));
  try {
    tape.matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const spg::ad::ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
  CHECK_THROWS_AS(tape.add(a, b), spg::ad::ShapeError);
  CHECK_THROWS_AS(tape.add_bias(a, tape.constant(Tensor::vector({1, 2}))), spg::ad::ShapeError);
  std::vector<std::size_t> wrong_count{0};
  CHECK_THROWS_AS(tape.gather(a, wrong_count), spg::ad::ShapeError);
  CHECK_THROWS_AS(tape.sum(a, {2}), spg::ad::ShapeError);
}

TEST_CASE("non-finite inputs are rejected") {
  Tape tape;
  CHECK_THROWS_AS(tape.constant(Tensor::vector({1.0, std::nan("")})), spg::ad::NonFiniteError);
  Tensor p = Tensor::vector({INFINITY});
  CHECK_THROWS_AS(tape.parameter(p), spg::ad::NonFiniteError);
}

TEST_CASE("backward of linear sum gives ones, of squared sum gives 2w") {
  Tensor w = Tensor::vector({0.5, -1.0, 3.0});
  w.set_requires_grad(true);
  {
    Tape tape;
    tape.backward(tape.sum(tape.parameter(w)));
    for (auto g : w.grad()) CHECK(g == 1.0);
  }
  w.zero_grad();
  {
    Tape tape;
    auto v = tape.parameter(w);
    tape.backward(tape.sum(tape.mul(v, v)));
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(w.grad()[i] == 2.0 * w[i]);
  }
}

TEST_CASE("backward rejects non-scalar loss and empty tape") {
  Tensor w = Tensor::vector({1.0, 2.0});
  w.set_requires_grad(true);
  Tape tape;
  auto v = tape.parameter(w);
  CHECK_THROWS_AS(tape.backward(v), spg::ad::ShapeError);
  Tape empty;
  CHECK_THROWS(empty.backward(Var{0}));
}

TEST_CASE("binding a tensor twice yields one node and accumulated gradient") {
  Tensor w = Tensor::vector({1.0, -2.0});
  w.set_requires_grad(true);
  Tape tape;
  auto a = tape.parameter(w);
  auto b = tape.parameter(w);
  CHECK(a.id == b.id);
  tape.backward(tape.sum(tape.add(a, b)));
  CHECK(w.grad()[0] == 2.0);
  CHECK(tape.empty());
}

TEST_CASE("reductions over chosen axes") {
  Tape tape;
  auto x = tape.constant(Tensor(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}));
  CHECK(tape.value(tape.sum(x, {0})).same_bits(Tensor::vector({5, 7, 9})));
  CHECK(tape.value(tape.sum(x, {1})).same_bits(Tensor::vector({6, 15})));
  CHECK(tape.value(tape.mean(x)).item() == 3.5);
  CHECK(tape.value(tape.sum(x)).shape().empty());
}

TEST_CASE("every primitive matches central differences on random inputs") {
  RngStream rng(2024, 7);
  const std::vector<std::size_t> classes{2, 0, 3};
  const std::vector<std::size_t> rows{1, 4, 1, 0};

  SUBCASE("matmul") {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    auto r = random_tensor({3, 2}, rng, false);
    CHECK(max_rel_error_for({&a, &b}, [&](Tape& t) {
            return contract(t, t.matmul(t.parameter(a), t.parameter(b)), r);
          }) < 1e-5);
  }
  SUBCASE("add and mul") {
    auto a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
    auto r = random_tensor({2, 3}, rng, false);
    CHECK(max_rel_error_for({&a, &b}, [&](Tape& t) {
            auto pa = t.parameter(a), pb = t.parameter(b);
            return contract(t, t.add(t.mul(pa, pb), pa), r);
          }) < 1e-5);
  }
  SUBCASE("add_bias") {
    auto x = random_tensor({3, 4}, rng), b = random_tensor({4}, rng);
    auto r = random_tensor({3, 4}, rng, false);
    CHECK(max_rel_error_for({&x, &b}, [&](Tape& t) {
            return contract(t, t.add_bias(t.parameter(x), t.parameter(b)), r);
          }) < 1e-5);
  }
  SUBCASE("relu") {
    auto x = random_tensor({4, 5}, rng);
    auto r = random_tensor({4, 5}, rng, false);
    CHECK(max_rel_error_for({&x}, [&](Tape& t) { return contract(t, t.relu(t.parameter(x)), r); }) < 1e-5);
  }
  SUBCASE("log_softmax") {
    auto x = random_tensor({3, 4}, rng);
    auto r = random_tensor({3, 4}, rng, false);
    CHECK(max_rel_error_for({&x}, [&](Tape& t) { return contract(t, t.log_softmax(t.parameter(x)), r); }) < 1e-5);
  }
  SUBCASE("gather") {
    auto x = random_tensor({3, 4}, rng);
    auto r = random_tensor({3}, rng, false);
    CHECK(max_rel_error_for({&x}, [&](Tape& t) { return contract(t, t.gather(t.parameter(x), classes), r); }) < 1e-5);
  }
  SUBCASE("embedding") {
    auto table = random_tensor({5, 3}, rng);
    auto r = random_tensor({4, 3}, rng, false);
    CHECK(max_rel_error_for({&table}, [&](Tape& t) {
            return contract(t, t.embedding(t.parameter(table), rows), r);
          }) < 1e-5);
  }
  SUBCASE("sum and mean over axes") {
    auto x = random_tensor({2, 3, 4}, rng);
    auto r1 = random_tensor({2, 4}, rng, false);
    auto r2 = random_tensor({3}, rng, false);
    CHECK(max_rel_error_for({&x}, [&](Tape& t) {
            auto px = t.parameter(x);
            return t.add(contract(t, t.sum(px, {1}), r1), contract(t, t.mean(px, {0, 2}), r2));
          }) < 1e-5);
  }
  SUBCASE("dropout with a fixed stream") {
    auto x = random_tensor({4, 6}, rng);
    auto r = random_tensor({4, 6}, rng, false);
    const RngStream start(99, spg::streams::dropout);
    CHECK(max_rel_error_for({&x}, [&](Tape& t) {
            RngStream local = start;
            return contract(t, t.dropout(t.parameter(x), 0.3, local, true), r);
          }) < 1e-5);
  }
}

TEST_CASE("composite network gradient matches central differences") {
  RngStream rng(5, 1);
  auto x = random_tensor({6, 4}, rng, false);
  auto w1 = random_tensor({4, 5}, rng), b1 = random_tensor({5}, rng);
  auto w2 = random_tensor({5, 3}, rng), b2 = random_tensor({3}, rng);
  const std::vector<std::size_t> y{0, 1, 2, 2, 1, 0};
  const RngStream start(11, spg::streams::dropout);
  auto err = max_rel_error_for({&w1, &b1, &w2, &b2}, [&](Tape& t) {
    RngStream local = start;
    auto h = t.relu(t.add_bias(t.matmul(t.constant(x), t.parameter(w1)), t.parameter(b1)));
    h = t.dropout(h, 0.25, local, true);
    auto logits = t.add_bias(t.matmul(h, t.parameter(w2)), t.parameter(b2));
    return t.mean(t.gather(t.log_softmax(logits), y));
  });
  CHECK(err < 1e-5);
}

TEST_CASE("dropout identities") {
  RngStream rng(3, spg::streams::dropout);
  Tensor x(Shape{50});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i) - 20.5;
  Tape tape;
  auto v = tape.constant(x);
  CHECK(tape.value(tape.dropout(v, 0.0, rng, true)).same_bits(x));
  CHECK(tape.value(tape.dropout(v, 0.2, rng, false)).same_bits(x));
  CHECK_THROWS_AS(tape.dropout(v, 1.0, rng, true), std::invalid_argument);
  CHECK_THROWS_AS(tape.dropout(v, -0.1, rng, true), std::invalid_argument);
}

TEST_CASE("dropout keep rate concentrates at 1-p") {
  const std::size_t n = 100000;
  const double p = 0.2;
  RngStream rng(17, spg::streams::dropout);
  Tape tape;
  auto d = tape.dropout(tape.constant(Tensor(Shape{n}, 1.0)), p, rng, true);
  const auto mask = tape.dropout_mask(d);
  const double kept = static_cast<double>(std::count_if(mask.begin(), mask.end(), [](double m) { return m != 0.0; }));
  const double sigma = std::sqrt(n * p * (1 - p));
  CHECK(std::abs(kept - n * (1 - p)) < 3 * sigma);
  // survivors are scaled by 1/(1-p)
  CHECK(tape.value(d)[static_cast<std::size_t>(std::find_if(mask.begin(), mask.end(), [](double m) { return m != 0; }) -
                                               mask.begin())] == 1.0 / 0.8);
}

TEST_CASE("composed dropout masks keep prod(1-p_k)") {
  const std::size_t n = 100000;
  const std::vector<double> rates{0.2, 0.2, 0.2};
  RngStream rng(23, spg::streams::dropout);
  Tape tape;
  Var h = tape.constant(Tensor(Shape{n}, 1.0));
  for (auto p : rates) h = tape.dropout(h, p, rng, true);
  const auto& out = tape.value(h);
  const double kept = static_cast<double>(std::count_if(out.data().begin(), out.data().end(), [](double v) { return v != 0.0; }));
  const double keep = 0.8 * 0.8 * 0.8;
  CHECK(std::abs(kept - n * keep) < 3 * std::sqrt(n * keep * (1 - keep)));
}

TEST_CASE("identical seeds give bit-identical masks") {
  auto run = [] {
    RngStream rng(42, spg::streams::dropout);
    Tape tape;
    auto d = tape.dropout(tape.constant(Tensor(Shape{1000}, 1.0)), 0.4, rng, true);
    return std::vector<double>(tape.dropout_mask(d).begin(), tape.dropout_mask(d).end());
  };
  CHECK(run() == run());
}
