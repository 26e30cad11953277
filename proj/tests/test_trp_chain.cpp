#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "spg/trp_chain.hpp"

using namespace spg;

namespace {

NetworkSpec blobs_net(std::size_t d = 6) {
  NetworkSpec s;
  s.kind = TaskKind::classification;
  s.input_dim = 4;
  s.width = d;
  s.hidden_layers = 2;
  s.classes = 3;
  return s;
}

TrpConfig chain_config(TrpVariant v, std::size_t d = 6, std::size_t classes = 3) {
  TrpConfig c;
  c.variant = v;
  c.depth = 3;
  c.rates = {0.2, 0.2, 0.2};
  c.blocks = 2;
  c.width = d;
  c.classes = classes;
  return c;
}

Batch random_batch(std::size_t units, std::size_t dim, RngStream& rng) {
  Batch b;
  b.samples = b.units = units;
  b.features = ad::Tensor(ad::Shape{units, dim});
  for (auto& x : b.features.data()) x = 4.0 * rng.uniform() - 2.0;
  b.targets.assign(units, 0);
  return b;
}

}  // namespace

TEST_CASE("cumulative rate") {
  TrpConfig c = chain_config(TrpVariant::hpo_dropout);
  CHECK(cumulative_rate(c, 1) == 0.2);
  CHECK(cumulative_rate(c, 2) == doctest::Approx(0.36).epsilon(1e-15));
  CHECK(cumulative_rate(c, 3) == doctest::Approx(0.488).epsilon(1e-15));
  c.rates = {0.3, 0.1, 0.05};
  CHECK(cumulative_rate(c, 1) == 0.3);
  CHECK(cumulative_rate(c, 1) < cumulative_rate(c, 2));
  CHECK(cumulative_rate(c, 2) < cumulative_rate(c, 3));
  CHECK_THROWS_AS(cumulative_rate(c, 0), std::out_of_range);
  CHECK_THROWS_AS(cumulative_rate(c, 4), std::out_of_range);
}

TEST_CASE("config validation") {
  auto c = chain_config(TrpVariant::hpo_dropout);
  c.rates = {0.2, 1.0, 0.2};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.rates = {0.2, 0.2};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  auto n = chain_config(TrpVariant::nas_depth);
  n.blocks = 0;
  CHECK_THROWS_AS(n.validate(), std::invalid_argument);
  CHECK(parse_trp_variant("nas") == TrpVariant::nas_depth);
  CHECK_THROWS_AS(parse_trp_variant("grid"), std::invalid_argument);
}

TEST_CASE("temporary parameter accounting") {
  auto c = chain_config(TrpVariant::hpo_dropout, 768);
  CHECK(added_param_count(c, 0).temporary == 1'771'776);
  CHECK(added_param_count(c, 0).temporary == 768u * 769u * 3u);
  c.width = 4;
  c.depth = 2;
  c.rates = {0.1, 0.1};
  CHECK(added_param_count(c, 10).temporary == 40);
  CHECK(added_param_count(c, 10).total == 50);
  c.depth = 0;
  c.rates.clear();
  CHECK(added_param_count(c, 10).temporary == 0);

  RngStream init(5, streams::init);
  for (auto v : {TrpVariant::hpo_dropout, TrpVariant::nas_depth}) {
    SpgModel model(BaseNetwork(blobs_net(), init));
    const auto base = model.budget().total;
    const auto cfg = chain_config(v);
    model.attach(cfg, init);
    const auto b = model.budget();
    CHECK(b.base == base);
    CHECK(b.temporary == added_param_count(cfg, base).temporary);
    std::size_t counted = 0;
    for (const auto& p : model.parameters()) counted += p.tensor->size();
    CHECK(counted == b.total);
    model.strip();
    CHECK(model.budget().total == base);
    CHECK(model.budget().temporary == 0);
    CHECK_THROWS_AS(model.strip(), std::logic_error);
  }
}

TEST_CASE("zero-init identity in eval mode, both variants") {
  RngStream init(11, streams::init), data(11, streams::data_test), drop(11, streams::dropout);
  for (auto v : {TrpVariant::hpo_dropout, TrpVariant::nas_depth}) {
    SpgModel model(BaseNetwork(blobs_net(), init));
    model.attach(chain_config(v), init);
    for (int trial = 0; trial < 100; ++trial) {
      const auto batch = random_batch(1, 4, data);
      ad::Tape tape;
      const auto out = model.forward(tape, batch, drop, false);
      REQUIRE(out.size() == 1);
      REQUIRE(out[0].logits.size() == 4);
      for (std::size_t t = 1; t <= 3; ++t) {
        REQUIRE(tape.value(out[0].logits[t]).same_bits(tape.value(out[0].logits[0])));
      }
    }
  }
}

TEST_CASE("nas variant is an identity at init even in training mode") {
  RngStream init(12, streams::init), data(12, streams::data_test), drop(12, streams::dropout);
  SpgModel model(BaseNetwork(blobs_net(), init));
  model.attach(chain_config(TrpVariant::nas_depth), init);
  const auto batch = random_batch(32, 4, data);
  ad::Tape tape;
  const auto out = model.forward(tape, batch, drop, true);
  for (std::size_t t = 1; t <= 3; ++t) CHECK(tape.value(out[0].hidden[t]).same_bits(tape.value(out[0].hidden[0])));
}

TEST_CASE("hpo training mode composes dropout masks") {
  RngStream init(13, streams::init), drop(13, streams::dropout);
  NetworkSpec s = blobs_net(50);
  s.input_dim = 50;
  s.hidden_layers = 0;
  SpgModel model(BaseNetwork(s, init));
  model.attach(chain_config(TrpVariant::hpo_dropout, 50), init);
  Batch b;
  b.samples = b.units = 2000;
  b.features = ad::Tensor(ad::Shape{2000, 50}, 1.0);
  b.targets.assign(2000, 0);
  ad::Tape tape;
  const auto out = model.forward(tape, b, drop, true);
  const double n = 2000.0 * 50.0;
  double keep = 1.0;
  for (std::size_t t = 1; t <= 3; ++t) {
    keep *= 0.8;
    const auto& h = tape.value(out[0].hidden[t]);
    double kept = 0;
    for (double x : h.data()) {
      // survivors carry the product of the inverted-dropout scales
      if (x != 0.0) {
        kept += 1;
        REQUIRE(x == doctest::Approx(1.0 / keep).epsilon(1e-12));
      }
    }
    const double sigma = std::sqrt(keep * (1 - keep) / n);
    CHECK(std::abs(kept / n - keep) < 3 * sigma);
  }
}

TEST_CASE("the head is one shared parameter instance") {
  RngStream init(14, streams::init), data(14, streams::data_test), drop(14, streams::dropout);
  SpgModel model(BaseNetwork(blobs_net(), init));
  model.attach(chain_config(TrpVariant::hpo_dropout), init);
  const auto batch = random_batch(5, 4, data);
  ad::Tape tape;
  const auto out = model.forward(tape, batch, drop, false);
  const auto* head_w = &model.base().head(0).weight;
  std::size_t head_nodes = 0;
  for (std::size_t id = 0; id < tape.size(); ++id)
    if (tape.op(ad::Var{id}) == ad::Op::parameter && tape.bound_tensor(ad::Var{id}) == head_w) ++head_nodes;
  CHECK(head_nodes == 1);

  // gradient from the deepest replica alone lands in the shared head
  model.base().head(0).weight.clear_grad();
  tape.backward(tape.sum(out[0].logits[3]));
  CHECK(model.base().head(0).weight.has_grad());

  // changing the head moves every π_t identically
  for (auto& w : model.base().head(0).weight.data()) w += 0.5;
  ad::Tape t2;
  const auto out2 = model.forward(t2, batch, drop, false);
  for (std::size_t t = 1; t <= 3; ++t) CHECK(t2.value(out2[0].logits[t]).same_bits(t2.value(out2[0].logits[0])));
}

TEST_CASE("strip preserves base predictions") {
  RngStream init(15, streams::init), data(15, streams::data_test), drop(15, streams::dropout);
  SpgModel model(BaseNetwork(blobs_net(), init));
  model.attach(chain_config(TrpVariant::hpo_dropout), init);
  // perturb the temporary modules so they are not the identity
  for (auto& p : model.parameters())
    if (p.name.rfind("trp.", 0) == 0)
      for (auto& x : p.tensor->data()) x = data.uniform() - 0.5;
  std::vector<Batch> batches;
  std::vector<ad::Tensor> pi0;
  for (int i = 0; i < 100; ++i) {
    batches.push_back(random_batch(1, 4, data));
    ad::Tape tape;
    const auto out = model.forward(tape, batches.back(), drop, false);
    pi0.push_back(tape.value(out[0].logits[0]));
  }
  model.strip();
  for (int i = 0; i < 100; ++i) {
    CHECK(model.base_logits(batches[i])[0].same_bits(pi0[i]));
    CHECK(model.predict(batches[i]) == argmax_rows(pi0[i]));
  }
}

TEST_CASE("width mismatch is rejected") {
  RngStream init(16, streams::init);
  SpgModel model(BaseNetwork(blobs_net(6), init));
  CHECK_THROWS_AS(model.attach(chain_config(TrpVariant::hpo_dropout, 8), init), std::invalid_argument);
  TrpChain chain(chain_config(TrpVariant::hpo_dropout, 8), init);
  ad::Tape tape;
  RngStream drop(1, 3);
  const auto h = tape.constant(ad::Tensor(ad::Shape{2, 6}, 1.0));
  CHECK_THROWS_AS(chain.forward(tape, h, model.base().head(0), drop, false), ad::ShapeError);
}

TEST_CASE("segmentation gets one chain per output stream") {
  RngStream init(17, streams::init), drop(17, streams::dropout);
  NetworkSpec s;
  s.kind = TaskKind::segmentation;
  s.input_dim = 9;
  s.width = 5;
  s.hidden_layers = 2;
  s.classes = 3;
  SpgModel model(BaseNetwork(s, init));
  const auto base = model.budget().base;
  model.attach(chain_config(TrpVariant::hpo_dropout, 5), init);
  CHECK(model.budget().temporary == added_param_count(chain_config(TrpVariant::hpo_dropout, 5), base, 2).temporary);
  Batch b;
  b.samples = 1;
  b.units = 7;
  b.features = ad::Tensor(ad::Shape{7, 9}, 0.3);
  b.targets.assign(7, 1);
  ad::Tape tape;
  const auto out = model.forward(tape, b, drop, false);
  REQUIRE(out.size() == 2);
  for (const auto& o : out)
    for (std::size_t t = 1; t <= 3; ++t) CHECK(tape.value(o.logits[t]).same_bits(tape.value(o.logits[0])));
}
