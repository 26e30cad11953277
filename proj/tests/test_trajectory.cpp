#include <cmath>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "spg/rng.hpp"
#include "spg/trajectory.hpp"

using namespace spg::traj;

namespace {

// Independent simulator for the oracle checks below: direct formula
// evaluation without going through the library's enumeration code.
struct OracleEpisode {
  std::vector<int> o;
  std::vector<int> r;
  std::vector<int> m;
};

OracleEpisode simulate(const std::vector<int>& correct) {
  OracleEpisode e;
  e.o.push_back(1);
  e.m.push_back(1);
  for (int c : correct) {
    const int prev = e.o.back();
    e.o.push_back(prev * (prev + c) - 1);
    e.m.push_back(e.m.back() * c);
  }
  for (int o : e.o) e.r.push_back(o >= 0 ? 1 : 0);
  return e;
}

std::vector<int> bits_of(std::size_t p, std::size_t depth) {
  std::vector<int> out;
  for (std::size_t t = 0; t < depth; ++t) out.push_back(static_cast<int>((p >> (depth - 1 - t)) & 1));
  return out;
}

}  // namespace

TEST_CASE("observed-state transition truth table") {
  CHECK(step_observed(1, true) == 1);
  CHECK(step_observed(1, false) == 0);
  CHECK(step_observed(0, true) == -1);
  CHECK(step_observed(0, false) == -1);
  CHECK(step_observed(-1, true) == -1);
  CHECK(step_observed(-1, false) == 0);
}

TEST_CASE("transition is closed over {-1,0,1}") {
  for (int o : {-1, 0, 1})
    for (bool c : {false, true}) {
      const int next = step_observed(o, c);
      CHECK(next >= -1);
      CHECK(next <= 1);
    }
}

TEST_CASE("state reward") {
  CHECK(state_reward(1) == 1);
  CHECK(state_reward(0) == 1);
  CHECK(state_reward(-1) == 0);
}

TEST_CASE("padded returns") {
  const std::vector<int> ones4{1, 1, 1, 1};
  CHECK(padded_return(ones4, ReturnWeights::recipe_default()) == doctest::Approx(1.7).epsilon(1e-15));
  const std::vector<int> ends_zero{1, 1, 0};
  CHECK(padded_return(ends_zero) == 0.0);
  CHECK(padded_return(ends_zero, ReturnWeights::recipe_default()) == 0.0);
  const std::vector<int> ones3{1, 1, 1};
  CHECK(padded_return(ones3) == 3.0);
  CHECK_THROWS_AS(padded_return(std::vector<int>{}), std::invalid_argument);
  CHECK_THROWS_AS(padded_return(ones4, ReturnWeights{{0.4}}), std::out_of_range);
}

TEST_CASE("return annihilation holds for random reward sequences") {
  spg::RngStream rng(8, 1);
  const auto w = ReturnWeights::recipe_default().extended_to(8);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    std::vector<int> r(n);
    for (auto& x : r) x = static_cast<int>(rng.below(2));
    r.back() = 0;
    CHECK(padded_return(r) == 0.0);
    CHECK(padded_return(r, w) == 0.0);
  }
}

TEST_CASE("policy readout") {
  const std::vector<double> uniform(4, 0.25);
  auto u = policy_readout(uniform, 3);
  CHECK(u.p_continue == 0.25);
  CHECK(u.p_stop == 0.75);
  const std::vector<double> onehot{0, 1, 0};
  CHECK(policy_readout(onehot, 1).p_continue == 1.0);
  CHECK(policy_readout(onehot, 1).p_stop == 0.0);

  const double e2 = std::exp(2.0), e1 = std::exp(1.0);
  const double z = e2 + e1 + 1.0;
  const std::vector<double> soft{e2 / z, e1 / z, 1.0 / z};
  auto s = policy_readout(soft, 0);
  CHECK(s.p_continue == doctest::Approx(e2 / (e2 + e1 + 1)).epsilon(1e-15));
  CHECK(s.p_stop == doctest::Approx(1 - e2 / (e2 + e1 + 1)).epsilon(1e-15));
  CHECK_THROWS_AS(policy_readout(soft, 3), std::out_of_range);
}

TEST_CASE("positional masks are running products") {
  auto check = [](std::vector<std::uint8_t> correct, std::vector<std::uint8_t> expected) {
    const auto m = mask_series(correct, 1, correct.size());
    for (std::size_t t = 0; t < expected.size(); ++t) CHECK(m.at(t, 0) == expected[t]);
  };
  check({1, 1, 0}, {1, 1, 1, 0});
  check({1, 1, 1}, {1, 1, 1, 1});
  check({0, 1, 1}, {1, 0, 0, 0});
  const std::vector<std::uint8_t> five(5, 1);
  CHECK_THROWS_AS(mask_series(five, 2, 3), std::invalid_argument);
}

TEST_CASE("masks are binary, start at one and never increase") {
  spg::RngStream rng(31, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.below(20), depth = 1 + rng.below(6);
    std::vector<std::uint8_t> correct(m * depth);
    for (auto& c : correct) c = static_cast<std::uint8_t>(rng.uniform() < 0.7);
    const auto masks = mask_series(correct, m, depth);
    for (std::size_t i = 0; i < m; ++i) {
      CHECK(masks.at(0, i) == 1);
      for (std::size_t t = 0; t < depth; ++t) {
        REQUIRE(masks.at(t + 1, i) <= masks.at(t, i));
        REQUIRE(masks.at(t + 1, i) <= 1);
      }
    }
    for (std::size_t t = 0; t < depth; ++t) CHECK(masks.survival(t + 1) <= masks.survival(t));
  }
}

TEST_CASE("effective batch size per task kind") {
  auto seg = effective_batch_size(spg::TaskKind::segmentation, {1, 180, 360, 1});
  CHECK(seg.units == 129600);
  CHECK(seg.layout == std::vector<std::size_t>{1, 180, 360, 2});
  CHECK(effective_batch_size(spg::TaskKind::classification, {3}).units == 3);
  CHECK(effective_batch_size(spg::TaskKind::language_model, {2, 1, 1, 3}).units == 6);
  CHECK(effective_batch_size("segmentation", {2, 16, 16, 1}).units == 1024);
  CHECK_THROWS_AS(effective_batch_size("detection", {1}), std::invalid_argument);
  CHECK_THROWS_AS(effective_batch_size(spg::TaskKind::classification, {0}), std::invalid_argument);
}

TEST_CASE("step lengths follow the three illustrated trajectories") {
  auto len = [](std::vector<std::uint8_t> c) { return step_length(mask_series(c, 1, 3), 0); };
  CHECK(len({0, 1, 1}) == 1);
  CHECK(len({0, 0, 0}) == 1);
  CHECK(len({1, 1, 1}) == 3);
  CHECK(len({1, 1, 0}) == 3);
  CHECK(len({1, 0, 1}) == 2);
  // no temporary modules: a single-step episode
  CHECK(step_length(MaskSeries(1, 0), 0) == 1);
}

TEST_CASE("grouped scale") {
  CHECK(grouped_scale(1, std::vector<std::size_t>{1})[0] == 1.0);
  CHECK(grouped_scale(4, std::vector<std::size_t>{2})[0] == 0.125);
  const auto s = grouped_scale(3, std::vector<std::size_t>{2, 3, 1});
  CHECK(s[0] == doctest::Approx(1.0 / 6).epsilon(1e-15));
  CHECK(s[1] == doctest::Approx(1.0 / 9).epsilon(1e-15));
  CHECK(s[2] == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK_THROWS_AS(grouped_scale(3, std::vector<std::size_t>{0}), std::invalid_argument);
  CHECK_THROWS_AS(grouped_scale(0, std::vector<std::size_t>{1}), std::invalid_argument);
}

TEST_CASE("exhaustive enumeration for T=1 and T=2") {
  const auto w = ReturnWeights::recipe_default();
  const auto t1 = enumerate_nonzero_returns(1, w);
  CHECK(t1.nonzero_count == 2);
  CHECK(t1.exact_identity());

  const auto t2 = enumerate_nonzero_returns(2, w);
  std::set<std::vector<std::uint8_t>> nonzero;
  for (const auto& tr : t2.traces)
    if (tr.nonzero_return) nonzero.insert(tr.pattern);
  CHECK(nonzero == std::set<std::vector<std::uint8_t>>{{1, 1}, {1, 0}});
  CHECK(t2.exact_identity());

  const auto& p10 = t2.traces[0b10];
  REQUIRE(p10.pattern == std::vector<std::uint8_t>{1, 0});
  CHECK(p10.masks[2] == 0);
  CHECK(p10.rewards[2] == 1);
  CHECK(p10.mask_reward_divergences == std::vector<std::size_t>{2});
}

TEST_CASE("enumeration agrees with the independent simulator for T <= 8") {
  for (std::size_t depth = 1; depth <= 8; ++depth) {
    const auto w = ReturnWeights::recipe_default().extended_to(depth);
    const auto rep = enumerate_nonzero_returns(depth, w);
    REQUIRE(rep.traces.size() == (std::size_t{1} << depth));
    CHECK(rep.invariant_violations == 0);
    std::size_t expected_differences = 0;
    for (std::size_t p = 0; p < rep.traces.size(); ++p) {
      const auto bits = bits_of(p, depth);
      const auto e = simulate(bits);
      const auto& tr = rep.traces[p];
      CHECK(tr.observed == e.o);
      CHECK(tr.rewards == e.r);
      CHECK(tr.observed.size() == depth + 1);
      const bool nonzero = e.r.back() == 1;
      CHECK(tr.nonzero_return == nonzero);
      bool prefix = true;
      for (std::size_t t = 0; t + 1 < depth; ++t) prefix = prefix && bits[t] == 1;
      const bool member = prefix && e.o[depth] >= 0;
      CHECK(tr.closed_form_member == member);
      // membership implies nonzero return; the converse fails only through a
      // -1 -> 0 transition at the last step
      if (member) CHECK(nonzero);
      if (nonzero && !member) {
        ++expected_differences;
        CHECK(e.o[depth - 1] == -1);
        CHECK(e.o[depth] == 0);
      }
      for (std::size_t t = 0; t <= depth; ++t) {
        if (e.m[t] == 1) CHECK(e.r[t] == 1);
      }
    }
    CHECK(rep.set_differences.size() == expected_differences);
    CHECK(rep.identity_modulo_resurrection());
    if (depth <= 2) CHECK(rep.exact_identity());
  }
  CHECK_THROWS_AS(enumerate_nonzero_returns(0, ReturnWeights{}), std::out_of_range);
  CHECK_THROWS_AS(enumerate_nonzero_returns(9, ReturnWeights::recipe_default().extended_to(9)), std::out_of_range);
}

TEST_CASE("a perturbed transition breaks the set identity") {
  auto mutant = +[](int o, bool c) { return o * (o + (c ? 1 : 0)); };
  const auto rep = enumerate_nonzero_returns(3, ReturnWeights::recipe_default(), mutant);
  CHECK((rep.invariant_violations > 0 || !rep.identity_modulo_resurrection()));
}
