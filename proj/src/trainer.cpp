#include "spg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace spg {

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "constant") return ScheduleKind::constant;
  if (name == "step" || name == "step-decay" || name == "step_decay") return ScheduleKind::step_decay;
  throw std::invalid_argument(fmt::format("unknown schedule '{}' (expected constant or step-decay)", name));
}

std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::constant ? "constant" : "step-decay";
}

double Schedule::rate(double base, std::size_t k) const {
  if (kind == ScheduleKind::constant) return base;
  double lr = base;
  for (std::size_t i = 0; i < k / interval; ++i) lr *= factor;
  return lr;
}

void TrainConfig::validate(std::size_t depth) const {
  if (cold_start_epochs > epochs)
    throw std::invalid_argument(
        fmt::format("train: cold_start_epochs ({}) exceeds epochs ({})", cold_start_epochs, epochs));
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("train: learning rate must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (schedule.kind == ScheduleKind::step_decay && (schedule.interval == 0 || !(schedule.factor > 0.0)))
    throw std::invalid_argument("train: step decay needs interval >= 1 and factor > 0");
  weights.validate();
  if (form == traj::ReturnForm::weighted && weights.lambdas.size() < depth)
    throw std::invalid_argument(
        fmt::format("train: weighted return needs {} lambdas, got {}", depth, weights.lambdas.size()));
}

bool TrainConfig::is_cold(std::size_t epoch) const {
  return optimizer == ad::OptimizerKind::adamw && epoch < cold_start_epochs;
}

double TrainConfig::lr_for_epoch(std::size_t epoch) const {
  if (is_cold(epoch)) return 0.0;
  const std::size_t warm = optimizer == ad::OptimizerKind::adamw ? cold_start_epochs : 0;
  return schedule.rate(lr, epoch - warm);
}

std::vector<double> depth_weights(const traj::ReturnWeights& weights, traj::ReturnForm form, std::size_t depth) {
  std::vector<double> w(depth + 1, 1.0);
  if (form == traj::ReturnForm::weighted)
    for (std::size_t t = 1; t <= depth; ++t) w[t] = weights.weight(t);
  return w;
}

StreamEpisode build_episode(const ad::Tape& tape, const ChainOutput& out, std::span<const std::size_t> targets) {
  StreamEpisode ep;
  ep.logits = out.logits;
  const std::size_t depth = out.logits.size() - 1, units = targets.size();
  std::vector<std::uint8_t> correct(units * depth);
  for (std::size_t t = 0; t <= depth; ++t) {
    const auto pred = argmax_rows(tape.value(out.logits[t]));
    if (pred.size() != units)
      throw ad::ShapeError(fmt::format("episode: {} logit rows for {} targets", pred.size(), units));
    for (std::size_t i = 0; i < units; ++i) {
      const std::uint8_t hit = pred[i] == targets[i];
      if (t == 0) ep.correct0.push_back(hit);
      if (t < depth) correct[i * depth + t] = hit;
    }
  }
  ep.masks = traj::mask_series(correct, units, depth);
  ep.lengths = traj::step_lengths(ep.masks);
  return ep;
}

ad::Var surrogate_loss(ad::Tape& tape, std::span<const StreamEpisode> streams, std::span<const std::size_t> targets,
                       std::span<const double> weights, std::size_t m) {
  if (streams.empty()) throw std::invalid_argument("surrogate_loss: no streams");
  std::optional<ad::Var> loss;
  for (const auto& s : streams) {
    const std::size_t depth = s.logits.size() - 1, units = targets.size();
    if (s.masks.units() != units || s.masks.depth() != depth)
      throw ad::ShapeError(fmt::format("surrogate_loss: masks {}x{} do not match {} units at depth {}",
                                       s.masks.units(), s.masks.depth(), units, depth));
    if (s.lengths.size() != units)
      throw ad::ShapeError(fmt::format("surrogate_loss: {} step lengths for {} units", s.lengths.size(), units));
    if (weights.size() < depth + 1)
      throw std::invalid_argument(fmt::format("surrogate_loss: {} depth weights for depth {}", weights.size(), depth));
    const auto scale = traj::grouped_scale(m, s.lengths);
    for (std::size_t t = 0; t <= depth; ++t) {
      const auto lp = tape.gather(tape.log_softmax(s.logits[t]), targets);
      if (tape.value(lp).size() != units)
        throw ad::ShapeError(fmt::format("surrogate_loss: logits at depth {} have {} rows, expected {}", t,
                                         tape.value(lp).size(), units));
      ad::Tensor coef(ad::Shape{units});
      for (std::size_t i = 0; i < units; ++i) coef[i] = -(weights[t] * s.masks.at(t, i)) * scale[i];
      const auto term = tape.sum(tape.mul(lp, tape.constant(std::move(coef))));
      loss = loss ? tape.add(*loss, term) : term;
    }
  }
  return *loss;
}

ad::Var cross_entropy(ad::Tape& tape, ad::Var logits, std::span<const std::size_t> targets) {
  const auto lp = tape.gather(tape.log_softmax(logits), targets);
  return tape.mul(tape.mean(lp), tape.constant(ad::Tensor::scalar(-1.0)));
}

void EpochAccumulator::reset(std::size_t depth) {
  *this = EpochAccumulator{};
  survivors.assign(depth + 1, 0.0);
}

Trainer::Trainer(SpgModel& model, TrainConfig config, const Dataset& train)
    : model_(model), config_(std::move(config)), train_(train) {
  config_.validate(model_.depth());
  if (train_.samples == 0) throw std::invalid_argument("trainer: empty training set");
  weights_ = depth_weights(config_.weights, config_.form, model_.depth());
  state_.optimizer.kind = config_.optimizer;
  state_.optimizer.hyper = {config_.lr, config_.beta1, config_.beta2, config_.eps, config_.weight_decay};
  state_.dropout = RngStream(config_.seed, streams::dropout);
  state_.acc.reset(model_.depth());
}

std::size_t Trainer::steps_per_epoch() const noexcept {
  return (train_.samples + config_.batch_size - 1) / config_.batch_size;
}

std::vector<std::size_t> Trainer::permutation(std::size_t epoch) const {
  std::vector<std::size_t> order(train_.samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngStream rng(config_.seed, streams::shuffle, static_cast<std::uint64_t>(epoch) << 32);
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  return order;
}

std::vector<ad::Tensor*> Trainer::params() {
  std::vector<ad::Tensor*> out;
  for (auto& p : model_.parameters()) out.push_back(p.tensor);
  return out;
}

StepStats Trainer::step() {
  if (done()) throw std::logic_error("trainer: all epochs already completed");
  if (order_epoch_ != state_.epoch) {
    order_ = permutation(state_.epoch);
    order_epoch_ = state_.epoch;
  }
  if (state_.cursor == 0) state_.acc.reset(model_.depth());

  const std::size_t begin = state_.cursor * config_.batch_size;
  const std::size_t end = std::min(train_.samples, begin + config_.batch_size);
  const auto batch = make_batch(train_, std::span(order_).subspan(begin, end - begin));
  const double lr = config_.lr_for_epoch(state_.epoch);
  auto ps = params();
  for (auto* p : ps) p->clear_grad();

  auto& acc = state_.acc;
  double loss_value = 0.0;
  try {
    ad::Tape tape;
    const auto outs = model_.forward(tape, batch, state_.dropout, true);
    ad::Var loss{};
    if (model_.attached()) {
      std::vector<StreamEpisode> eps;
      for (const auto& o : outs) eps.push_back(build_episode(tape, o, batch.targets));
      loss = surrogate_loss(tape, eps, batch.targets, weights_, batch.units * outs.size());
      for (const auto& e : eps) {
        for (std::size_t t = 0; t <= e.masks.depth(); ++t) {
          const auto row = e.masks.row(t);
          acc.survivors[t] += static_cast<double>(std::accumulate(row.begin(), row.end(), std::size_t{0}));
        }
        for (auto l : e.lengths) acc.step_length_sum += static_cast<double>(l);
        acc.episodes += batch.units;
      }
      acc.correct += std::accumulate(eps[0].correct0.begin(), eps[0].correct0.end(), std::uint64_t{0});
    } else {
      if (outs.size() == 1) {
        loss = cross_entropy(tape, outs[0].logits[0], batch.targets);
      } else {
        const double share = -1.0 / static_cast<double>(outs.size());
        for (std::size_t s = 0; s < outs.size(); ++s) {
          const auto lp = tape.gather(tape.log_softmax(outs[s].logits[0]), batch.targets);
          const auto term = tape.mul(tape.mean(lp), tape.constant(ad::Tensor::scalar(share)));
          loss = s == 0 ? term : tape.add(loss, term);
        }
      }
      const auto pred = argmax_rows(tape.value(outs[0].logits[0]));
      for (std::size_t i = 0; i < pred.size(); ++i) acc.correct += pred[i] == batch.targets[i];
      acc.survivors[0] += static_cast<double>(batch.units * outs.size());
      acc.step_length_sum += static_cast<double>(batch.units * outs.size());
      acc.episodes += batch.units * outs.size();
    }
    loss_value = tape.value(loss).item();
    tape.backward(loss);
  } catch (const ad::NonFiniteError& e) {
    throw DivergenceError(fmt::format("training diverged at epoch {} step {}: {}", state_.epoch, state_.cursor, e.what()));
  }
  if (!std::isfinite(loss_value))
    throw DivergenceError(fmt::format("training diverged at epoch {} step {}: loss {}", state_.epoch, state_.cursor,
                                      loss_value));
  ad::optimizer_step(state_.optimizer, ps, lr);

  acc.loss_sum += loss_value;
  acc.steps += 1;
  acc.units += batch.units;

  if (++state_.cursor == steps_per_epoch()) {
    state_.cursor = 0;
    ++state_.epoch;
  }
  return {loss_value, lr};
}

EpochStats Trainer::run_epoch() {
  if (done()) throw std::logic_error("trainer: all epochs already completed");
  EpochStats st;
  st.epoch = state_.epoch;
  st.cold = config_.is_cold(st.epoch);
  st.lr = config_.lr_for_epoch(st.epoch);
  while (state_.epoch == st.epoch) step();
  const auto& acc = state_.acc;
  st.loss = acc.loss_sum / static_cast<double>(acc.steps);
  st.accuracy = static_cast<double>(acc.correct) / static_cast<double>(acc.units);
  st.mean_step_length = acc.step_length_sum / static_cast<double>(acc.episodes);
  for (double s : acc.survivors) st.survival.push_back(s / static_cast<double>(acc.episodes));
  return st;
}

void Trainer::restore(TrainerState state) {
  if (state.acc.survivors.size() != model_.depth() + 1)
    throw std::invalid_argument("trainer: saved state does not match the model depth");
  state_ = std::move(state);
}

void cold_start(SpgModel& model, ad::OptimizerState& optimizer, const Dataset& data, const TrainConfig& config,
                std::size_t epochs) {
  TrainConfig cold = config;
  cold.optimizer = ad::OptimizerKind::adamw;
  cold.epochs = epochs;
  cold.cold_start_epochs = epochs;
  Trainer trainer(model, cold, data);
  TrainerState st = trainer.state();
  st.optimizer = optimizer;
  trainer.restore(std::move(st));
  while (!trainer.done()) trainer.run_epoch();
  optimizer = trainer.optimizer();
}

EvalMetrics evaluate(SpgModel& model, const Dataset& data, bool with_chain, std::size_t batch_size) {
  EvalMetrics m;
  const std::size_t classes = model.base().spec().classes;
  const bool chain = with_chain && model.attached();
  const std::size_t depth = chain ? model.depth() : 0;
  // keep batches around a few thousand units regardless of task
  const std::size_t per_batch = std::max<std::size_t>(1, std::min(batch_size, 8192 / data.units_per_sample));
  std::vector<std::size_t> tp(classes), fp(classes), fn(classes);
  std::vector<std::size_t> depth_hits(depth + 1);
  std::vector<double> survivors(depth + 1);
  double loss_sum = 0.0, length_sum = 0.0;
  std::size_t hits = 0, clean_hits = 0, clean_units = 0, episodes = 0;
  RngStream unused(0, streams::dropout);
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.samples; begin += per_batch) {
    idx.resize(std::min(per_batch, data.samples - begin));
    std::iota(idx.begin(), idx.end(), begin);
    const auto batch = make_batch(data, idx);
    ad::Tape tape;
    ad::Var pi0{};
    if (chain) {
      const auto outs = model.forward(tape, batch, unused, false);
      pi0 = outs[0].logits[0];
      for (const auto& o : outs) {
        const auto ep = build_episode(tape, o, batch.targets);
        for (std::size_t t = 0; t <= depth; ++t) {
          const auto row = ep.masks.row(t);
          survivors[t] += static_cast<double>(std::accumulate(row.begin(), row.end(), std::size_t{0}));
        }
        for (auto l : ep.lengths) length_sum += static_cast<double>(l);
        episodes += batch.units;
      }
      for (std::size_t t = 0; t <= depth; ++t) {
        const auto pred = argmax_rows(tape.value(outs[0].logits[t]));
        for (std::size_t i = 0; i < pred.size(); ++i) depth_hits[t] += pred[i] == batch.targets[i];
      }
    } else {
      auto reps = model.base().forward(tape, batch);
      pi0 = reps[0].head->forward(tape, reps[0].rep);
    }
    const auto lp = tape.value(tape.gather(tape.log_softmax(pi0), batch.targets));
    for (double v : lp.data()) loss_sum -= v;
    const auto pred = argmax_rows(tape.value(pi0));
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool hit = pred[i] == batch.targets[i];
      hits += hit;
      if (hit) {
        ++tp[pred[i]];
      } else {
        ++fp[pred[i]];
        ++fn[batch.targets[i]];
      }
      if (!data.clean.empty()) {
        const std::size_t unit = begin * data.units_per_sample + i;
        if (data.clean[unit]) {
          ++clean_units;
          clean_hits += hit;
        }
      }
    }
    m.units += batch.units;
  }
  const auto n = static_cast<double>(m.units);
  m.loss = loss_sum / n;
  m.accuracy = static_cast<double>(hits) / n;
  if (data.kind == TaskKind::segmentation) {
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      const auto denom = tp[c] + fp[c] + fn[c];
      const double iou = denom ? static_cast<double>(tp[c]) / static_cast<double>(denom) : 0.0;
      m.iou.push_back(iou);
      if (denom) {
        sum += iou;
        ++present;
      }
    }
    m.mean_iou = present ? sum / static_cast<double>(present) : 0.0;
  }
  if (clean_units) m.clean_accuracy = static_cast<double>(clean_hits) / static_cast<double>(clean_units);
  if (chain) {
    for (auto h : depth_hits) m.depth_accuracy.push_back(static_cast<double>(h) / n);
    for (double s : survivors) m.survival.push_back(s / static_cast<double>(episodes));
    m.mean_step_length = length_sum / static_cast<double>(episodes);
  }
  return m;
}

}  // namespace spg
