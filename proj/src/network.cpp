#include "spg/network.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace spg {

Linear::Linear(std::size_t in, std::size_t out) : weight(ad::Shape{in, out}), bias(ad::Shape{out}) {
  weight.set_requires_grad(true);
  bias.set_requires_grad(true);
}

Linear Linear::zeros(std::size_t in, std::size_t out) { return Linear(in, out); }

Linear Linear::normal(std::size_t in, std::size_t out, double gain, RngStream& rng) {
  Linear l(in, out);
  const double scale = std::sqrt(gain / static_cast<double>(in));
  for (auto& w : l.weight.data()) w = scale * rng.normal();
  return l;
}

ad::Var Linear::forward(ad::Tape& tape, ad::Var x) {
  return tape.add_bias(tape.matmul(x, tape.parameter(weight)), tape.parameter(bias));
}

void Linear::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

void NetworkSpec::validate() const {
  if (width == 0) throw std::invalid_argument("network: width must be positive");
  if (classes < 2) throw std::invalid_argument(fmt::format("network: need at least 2 classes, got {}", classes));
  if (input_dim == 0) throw std::invalid_argument("network: input_dim must be positive");
  switch (kind) {
    case TaskKind::classification:
      if (hidden_layers == 0 && input_dim != width)
        throw std::invalid_argument(
            fmt::format("network: with no hidden layers the width ({}) must equal input_dim ({})", width, input_dim));
      break;
    case TaskKind::segmentation:
      if (input_dim != 9) throw std::invalid_argument("network: segmentation reads 3x3 patches (input_dim 9)");
      if (hidden_layers < 2)
        throw std::invalid_argument("network: segmentation needs >= 2 hidden layers (auxiliary head reads the first)");
      break;
    case TaskKind::language_model:
      if (vocab < 2) throw std::invalid_argument("network: vocab must be >= 2");
      if (hidden_layers < 1) throw std::invalid_argument("network: language model needs >= 1 hidden layer");
      break;
  }
}

BaseNetwork::BaseNetwork(NetworkSpec spec, RngStream& init) : spec_(spec) {
  spec_.validate();
  const std::size_t d = spec_.width;
  std::size_t first_dense = 0;
  if (spec_.kind == TaskKind::language_model) {
    embedding_ = ad::Tensor(ad::Shape{spec_.input_dim * spec_.vocab, d});
    const double scale = 1.0 / std::sqrt(static_cast<double>(spec_.input_dim));
    for (auto& w : embedding_.data()) w = scale * init.normal();
    embedding_.set_requires_grad(true);
    embedding_bias_ = ad::Tensor(ad::Shape{d});
    embedding_bias_.set_requires_grad(true);
    first_dense = 1;
  }
  std::size_t in = spec_.kind == TaskKind::language_model ? d : spec_.input_dim;
  for (std::size_t l = first_dense; l < spec_.hidden_layers; ++l) {
    layers_.push_back(Linear::normal(in, d, 2.0, init));
    in = d;
  }
  if (spec_.kind == TaskKind::segmentation) {
    mid_layers_ = 1;
    aux_head_ = Linear::normal(d, spec_.classes, 1.0, init);
  }
  head_ = Linear::normal(in, spec_.classes, 1.0, init);
}

std::size_t BaseNetwork::param_count() const {
  std::size_t n = 0;
  if (spec_.kind == TaskKind::language_model) n += embedding_.size() + embedding_bias_.size();
  for (const auto& l : layers_) n += l.param_count();
  n += head_.param_count();
  if (spec_.kind == TaskKind::segmentation) n += aux_head_.param_count();
  return n;
}

std::vector<NamedParam> BaseNetwork::parameters() {
  std::vector<NamedParam> out;
  if (spec_.kind == TaskKind::language_model) {
    out.push_back({"embed.table", &embedding_});
    out.push_back({"embed.bias", &embedding_bias_});
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect(fmt::format("layer{}", l), out);
  head_.collect("head", out);
  if (spec_.kind == TaskKind::segmentation) aux_head_.collect("aux_head", out);
  return out;
}

Linear& BaseNetwork::head(std::size_t stream) {
  if (stream >= spec_.streams()) throw std::out_of_range(fmt::format("network: no output stream {}", stream));
  return stream == 0 ? head_ : aux_head_;
}

std::vector<StreamRep> BaseNetwork::forward(ad::Tape& tape, const Batch& batch) {
  ad::Var h{};
  if (spec_.kind == TaskKind::language_model) {
    if (batch.tokens.size() != spec_.input_dim)
      throw ad::ShapeError(fmt::format("network: expected {} token positions, got {}", spec_.input_dim, batch.tokens.size()));
    const auto table = tape.parameter(embedding_);
    h = tape.embedding(table, batch.tokens[0]);
    for (std::size_t p = 1; p < batch.tokens.size(); ++p) h = tape.add(h, tape.embedding(table, batch.tokens[p]));
    h = tape.relu(tape.add_bias(h, tape.parameter(embedding_bias_)));
  } else {
    if (batch.features.rank() != 2 || batch.features.dim(1) != spec_.input_dim)
      throw ad::ShapeError(fmt::format("network: expected [units,{}] features, got {}", spec_.input_dim,
                                       ad::shape_string(batch.features.shape())));
    h = tape.constant(batch.features);
  }

  std::vector<StreamRep> out;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = tape.relu(layers_[l].forward(tape, h));
    if (spec_.kind == TaskKind::segmentation && l + 1 == mid_layers_) out.push_back({h, &aux_head_});
  }
  out.insert(out.begin(), StreamRep{h, &head_});
  return out;
}

std::vector<std::size_t> argmax_rows(const ad::Tensor& logits) {
  if (logits.rank() != 2) throw ad::ShapeError("argmax_rows: expected a matrix");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c)
      if (logits[r * cols + c] > logits[r * cols + best]) best = c;
    out[r] = best;
  }
  return out;
}

}  // namespace spg
