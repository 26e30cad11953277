#pragma once

// Reference networks for the three task kinds. Each network exposes one or
// more output streams: a width-D representation plus the head that reads it.

#include <cstddef>
#include <string>
#include <vector>

#include "spg/rng.hpp"
#include "spg/tape.hpp"
#include "spg/task_kind.hpp"
#include "spg/tensor.hpp"

namespace spg {

/// A parameter tensor with a stable, checkpoint-visible name.
struct NamedParam {
  std::string name;
  ad::Tensor* tensor = nullptr;
};

/// y = x W + b with W stored [in, out].
struct Linear {
  ad::Tensor weight;
  ad::Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out);

  /// Zero weight and bias.
  static Linear zeros(std::size_t in, std::size_t out);
  /// Gaussian weights with variance gain/in, zero bias.
  static Linear normal(std::size_t in, std::size_t out, double gain, RngStream& rng);

  std::size_t in() const { return weight.dim(0); }
  std::size_t out() const { return weight.dim(1); }
  std::size_t param_count() const { return weight.size() + bias.size(); }
  ad::Var forward(ad::Tape& tape, ad::Var x);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

struct NetworkSpec {
  TaskKind kind = TaskKind::classification;
  /// Features per unit: F (classification), patch size 9 (segmentation),
  /// context length L (language modelling).
  std::size_t input_dim = 0;
  /// Representation width D.
  std::size_t width = 0;
  /// Hidden ReLU layers before the representation. Classification allows 0
  /// (the representation is the raw input, so D must equal F).
  std::size_t hidden_layers = 1;
  /// Output classes V.
  std::size_t classes = 0;
  /// Token vocabulary (language modelling only).
  std::size_t vocab = 0;

  void validate() const;
  /// Output streams: 2 for segmentation (standard and auxiliary), else 1.
  std::size_t streams() const { return kind == TaskKind::segmentation ? 2 : 1; }
};

/// Network input for one minibatch, already flattened into units.
struct Batch {
  std::size_t samples = 0;
  std::size_t units = 0;              // rows per stream
  ad::Tensor features;                // [units, input_dim] (classification, segmentation)
  std::vector<std::vector<std::size_t>> tokens;  // [L][units] embedding rows (language modelling)
  std::vector<std::size_t> targets;   // one class per unit
};

/// Representation and head of one output stream.
struct StreamRep {
  ad::Var rep;
  Linear* head = nullptr;
};

class BaseNetwork {
 public:
  BaseNetwork() = default;
  BaseNetwork(NetworkSpec spec, RngStream& init);

  const NetworkSpec& spec() const noexcept { return spec_; }
  std::size_t param_count() const;
  std::vector<NamedParam> parameters();

  /// Records the base forward pass and returns one entry per stream.
  std::vector<StreamRep> forward(ad::Tape& tape, const Batch& batch);

  Linear& head(std::size_t stream);

 private:
  NetworkSpec spec_;
  ad::Tensor embedding_;        // [L*vocab, D], language modelling only
  ad::Tensor embedding_bias_;   // [D]
  std::vector<Linear> layers_;
  std::size_t mid_layers_ = 0;  // segmentation: layers feeding the auxiliary head
  Linear head_;
  Linear aux_head_;
};

/// Row-wise argmax of a [units, V] tensor; ties go to the lower index.
std::vector<std::size_t> argmax_rows(const ad::Tensor& logits);

}  // namespace spg
