#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "spg/rng.hpp"
#include "spg/tensor.hpp"

namespace spg::ad {

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

enum class Op : std::uint8_t {
  constant,
  parameter,
  matmul,
  add,
  mul,
  add_bias,
  relu,
  log_softmax,
  gather,
  embedding,
  sum,
  mean,
  dropout,
};

const char* op_name(Op op) noexcept;

/// Reverse-mode tape over a closed set of tensor primitives.
///
/// Nodes are appended in evaluation order, so every record's inputs precede
/// it. backward() walks the records once in reverse, accumulates gradients
/// into bound parameter tensors, then resets the tape.
///
/// Shape rules:
///   matmul      [n,k] x [k,m] -> [n,m]
///   add, mul    identical shapes
///   add_bias    [..., d] + [d]
///   relu        any shape
///   log_softmax [..., V] normalised over the last axis
///   gather      [..., V] with one class index per leading position -> [...]
///   embedding   table [R,E], row indices (n) -> [n,E]
///   sum, mean   reduce the listed axes (all axes when empty) -> remaining axes
///   dropout     any shape
class Tape {
 public:
  Var constant(Tensor value);
  /// Binds an external tensor. Binding the same tensor twice returns the same
  /// node, so a shared parameter has exactly one node per tape.
  Var parameter(Tensor& tensor);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_bias(Var x, Var bias);
  Var relu(Var x);
  Var log_softmax(Var x);
  Var gather(Var x, std::span<const std::size_t> classes);
  Var embedding(Var table, std::span<const std::size_t> rows);
  Var sum(Var x, std::vector<std::size_t> axes = {});
  Var mean(Var x, std::vector<std::size_t> axes = {});
  /// Inverted dropout: training mode zeroes each element with probability p
  /// and scales survivors by 1/(1-p); eval mode records an identity node.
  Var dropout(Var x, double p, RngStream& rng, bool training);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  /// Scaled keep-mask of a dropout node (1/(1-p) kept, 0 dropped); empty in
  /// eval mode.
  std::span<const double> dropout_mask(Var v) const;
  Op op(Var v) const { return nodes_.at(v.id).op; }
  const Tensor* bound_tensor(Var v) const { return nodes_.at(v.id).bound; }

  /// Accumulates d(loss)/d(tensor) into every bound tensor with
  /// requires_grad, then clears the tape. The loss must hold one value.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }
  void clear() noexcept;

 private:
  struct Node {
    Op op = Op::constant;
    std::size_t a = 0;
    std::size_t b = 0;
    Tensor value;
    bool needs_grad = false;
    Tensor* bound = nullptr;
    std::vector<std::size_t> index;  // gather classes, embedding rows, reduced axes
    std::vector<double> saved;       // log_softmax probs, dropout scaled mask
  };

  const Node& node(Var v, const char* what) const;
  Var push(Node n);
  void require_finite(const Node& n, const char* what) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> bound_ids_;
};

}  // namespace spg::ad
