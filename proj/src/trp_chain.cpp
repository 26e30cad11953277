#include "spg/trp_chain.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace spg {

TrpVariant parse_trp_variant(std::string_view name) {
  if (name == "hpo" || name == "hpo-dropout" || name == "hpo_dropout") return TrpVariant::hpo_dropout;
  if (name == "nas" || name == "nas-depth" || name == "nas_depth") return TrpVariant::nas_depth;
  throw std::invalid_argument(fmt::format("unknown TRP variant '{}' (expected hpo or nas)", name));
}

std::string_view to_string(TrpVariant variant) {
  return variant == TrpVariant::hpo_dropout ? "hpo" : "nas";
}

void TrpConfig::validate() const {
  if (width == 0) throw std::invalid_argument("trp: width D must be positive");
  if (classes < 2) throw std::invalid_argument("trp: need at least 2 output classes");
  if (variant == TrpVariant::hpo_dropout) {
    if (rates.size() != depth)
      throw std::invalid_argument(fmt::format("trp: {} dropout rates given for {} modules", rates.size(), depth));
    for (double p : rates)
      if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument(fmt::format("trp: dropout rate {} outside [0,1)", p));
  } else if (blocks == 0) {
    throw std::invalid_argument("trp: nas modules need at least one block");
  }
}

double cumulative_rate(const TrpConfig& config, std::size_t t) {
  if (t < 1 || t > config.depth || t > config.rates.size())
    throw std::out_of_range(fmt::format("cumulative_rate: t={} outside 1..{}", t, config.depth));
  // r_k = r_{k-1} + (1 - r_{k-1}) p_k, which keeps t = 1 exactly equal to p_1
  double rate = config.rates[0];
  for (std::size_t k = 1; k < t; ++k) rate += (1.0 - rate) * config.rates[k];
  return rate;
}

ParamBudget added_param_count(const TrpConfig& config, std::size_t base_params, std::size_t streams) {
  const std::size_t d = config.width;
  std::size_t per_module = d * d + d;
  if (config.variant == TrpVariant::nas_depth) per_module *= 2 * config.blocks;
  ParamBudget b;
  b.base = base_params;
  b.temporary = streams * config.depth * per_module;
  b.total = b.base + b.temporary;
  return b;
}

TrpModule::TrpModule(const TrpConfig& config, std::size_t index, RngStream& init) : variant_(config.variant) {
  const std::size_t d = config.width;
  if (variant_ == TrpVariant::hpo_dropout) {
    rate_ = config.rates.at(index);
    linear_ = Linear::zeros(d, d);
  } else {
    for (std::size_t b = 0; b < config.blocks; ++b) {
      inner_.push_back(Linear::normal(d, d, 2.0, init));
      outer_.push_back(Linear::zeros(d, d));
    }
  }
}

ad::Var TrpModule::forward(ad::Tape& tape, ad::Var h, RngStream& dropout, bool training) {
  if (variant_ == TrpVariant::hpo_dropout) {
    const auto dropped = tape.dropout(h, rate_, dropout, training);
    last_dropout_ = dropped;
    return tape.add(dropped, linear_.forward(tape, dropped));
  }
  for (std::size_t b = 0; b < inner_.size(); ++b) {
    const auto branch = outer_[b].forward(tape, tape.relu(inner_[b].forward(tape, h)));
    h = tape.add(h, branch);
  }
  return h;
}

std::size_t TrpModule::param_count() const {
  if (variant_ == TrpVariant::hpo_dropout) return linear_.param_count();
  std::size_t n = 0;
  for (std::size_t b = 0; b < inner_.size(); ++b) n += inner_[b].param_count() + outer_[b].param_count();
  return n;
}

void TrpModule::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  if (variant_ == TrpVariant::hpo_dropout) {
    linear_.collect(prefix + ".linear", out);
    return;
  }
  for (std::size_t b = 0; b < inner_.size(); ++b) {
    inner_[b].collect(fmt::format("{}.block{}.inner", prefix, b), out);
    outer_[b].collect(fmt::format("{}.block{}.outer", prefix, b), out);
  }
}

TrpChain::TrpChain(const TrpConfig& config, RngStream& init) : config_(config) {
  config_.validate();
  modules_.reserve(config_.depth);
  for (std::size_t t = 0; t < config_.depth; ++t) modules_.emplace_back(config_, t, init);
}

ChainOutput TrpChain::forward(ad::Tape& tape, ad::Var h0, Linear& head, RngStream& dropout, bool training) {
  const auto& v = tape.value(h0);
  if (v.rank() != 2 || v.dim(1) != config_.width)
    throw ad::ShapeError(fmt::format("trp chain: representation {} does not have width D={}",
                                     ad::shape_string(v.shape()), config_.width));
  if (head.in() != config_.width || head.out() != config_.classes)
    throw ad::ShapeError(fmt::format("trp chain: head maps {}->{}, chain expects {}->{}", head.in(), head.out(),
                                     config_.width, config_.classes));
  ChainOutput out;
  out.hidden.push_back(h0);
  out.logits.push_back(head.forward(tape, h0));
  for (auto& m : modules_) {
    out.hidden.push_back(m.forward(tape, out.hidden.back(), dropout, training));
    out.logits.push_back(head.forward(tape, out.hidden.back()));
  }
  return out;
}

std::size_t TrpChain::param_count() const {
  std::size_t n = 0;
  for (const auto& m : modules_) n += m.param_count();
  return n;
}

void TrpChain::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  for (std::size_t t = 0; t < modules_.size(); ++t) modules_[t].collect(fmt::format("{}.m{}", prefix, t + 1), out);
}

void SpgModel::attach(const TrpConfig& config, RngStream& init) {
  if (attached()) throw std::logic_error("attach: a TRP chain is already attached");
  const auto& spec = base_.spec();
  if (config.width != spec.width || config.classes != spec.classes)
    throw std::invalid_argument(fmt::format("attach: chain D={} V={} does not match network D={} V={}", config.width,
                                            config.classes, spec.width, spec.classes));
  std::vector<TrpChain> chains;
  for (std::size_t s = 0; s < spec.streams(); ++s) chains.emplace_back(config, init);
  chains_ = std::move(chains);
  config_ = config;
}

void SpgModel::strip() {
  if (!config_) throw std::logic_error("strip: model has no TRP chain (already stripped?)");
  chains_.clear();
  config_.reset();
}

std::vector<ChainOutput> SpgModel::forward(ad::Tape& tape, const Batch& batch, RngStream& dropout, bool training) {
  auto reps = base_.forward(tape, batch);
  std::vector<ChainOutput> out;
  for (std::size_t s = 0; s < reps.size(); ++s) {
    if (config_) {
      out.push_back(chains_[s].forward(tape, reps[s].rep, *reps[s].head, dropout, training));
    } else {
      ChainOutput o;
      o.hidden.push_back(reps[s].rep);
      o.logits.push_back(reps[s].head->forward(tape, reps[s].rep));
      out.push_back(std::move(o));
    }
  }
  return out;
}

std::vector<ad::Tensor> SpgModel::base_logits(const Batch& batch) {
  ad::Tape tape;
  auto reps = base_.forward(tape, batch);
  std::vector<ad::Tensor> out;
  for (auto& r : reps) out.push_back(tape.value(r.head->forward(tape, r.rep)));
  return out;
}

std::vector<std::size_t> SpgModel::predict(const Batch& batch) { return argmax_rows(base_logits(batch).at(0)); }

std::vector<NamedParam> SpgModel::parameters() {
  auto out = base_.parameters();
  for (std::size_t s = 0; s < chains_.size(); ++s) chains_[s].collect(fmt::format("trp.s{}", s), out);
  return out;
}

ParamBudget SpgModel::budget() const {
  ParamBudget b;
  b.base = base_.param_count();
  for (const auto& c : chains_) b.temporary += c.param_count();
  b.total = b.base + b.temporary;
  return b;
}

}  // namespace spg
