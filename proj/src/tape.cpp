#include "spg/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace spg::ad {

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::constant: return "constant";
    case Op::parameter: return "parameter";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::mul: return "mul";
    case Op::add_bias: return "add_bias";
    case Op::relu: return "relu";
    case Op::log_softmax: return "log_softmax";
    case Op::gather: return "gather";
    case Op::embedding: return "embedding";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::dropout: return "dropout";
  }
  return "unknown";
}

namespace {

[[noreturn]] void mismatch(const char* prim, const Shape& a, const Shape& b) {
  throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", prim, shape_string(a), shape_string(b)));
}

std::size_t last_dim(const Tensor& t, const char* prim) {
  if (t.rank() == 0) throw ShapeError(fmt::format("{}: needs rank >= 1, got scalar", prim));
  return t.shape().back();
}

}  // namespace

const Tape::Node& Tape::node(Var v, const char* what) const {
  if (v.id >= nodes_.size()) throw std::out_of_range(fmt::format("{}: variable {} is not on this tape", what, v.id));
  return nodes_[v.id];
}

void Tape::require_finite(const Node& n, const char* what) const {
  if (!n.value.all_finite()) throw NonFiniteError(fmt::format("{}: non-finite value", what));
}

Var Tape::push(Node n) {
  require_finite(n, op_name(n.op));
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Tape::clear() noexcept {
  nodes_.clear();
  bound_ids_.clear();
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = Op::constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Tensor& tensor) {
  if (auto it = bound_ids_.find(&tensor); it != bound_ids_.end()) return Var{it->second};
  Node n;
  n.op = Op::parameter;
  n.value = tensor;
  n.value.clear_grad();
  n.bound = &tensor;
  n.needs_grad = tensor.requires_grad();
  auto v = push(std::move(n));
  bound_ids_.emplace(&tensor, v.id);
  return v;
}

Var Tape::matmul(Var a, Var b) {
  const auto& x = node(a, "matmul").value;
  const auto& y = node(b, "matmul").value;
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) mismatch("matmul", x.shape(), y.shape());
  const std::size_t n = x.dim(0), k = x.dim(1), m = y.dim(1);
  Tensor out(Shape{n, m});
  auto o = out.data();
  const auto xd = x.data();
  const auto yd = y.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = xd[i * k + p];
      if (xv == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) o[i * m + j] += xv * yd[p * m + j];
    }
  }
  Node r;
  r.op = Op::matmul;
  r.a = a.id;
  r.b = b.id;
  r.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  r.value = std::move(out);
  return push(std::move(r));
}

Var Tape::add(Var a, Var b) {
  const auto& x = node(a, "add").value;
  const auto& y = node(b, "add").value;
  if (x.shape() != y.shape()) mismatch("add", x.shape(), y.shape());
  Tensor out = x;
  auto o = out.data();
  const auto yd = y.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += yd[i];
  Node r;
  r.op = Op::add;
  r.a = a.id;
  r.b = b.id;
  r.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  r.value = std::move(out);
  return push(std::move(r));
}

Var Tape::mul(Var a, Var b) {
  const auto& x = node(a, "mul").value;
  const auto& y = node(b, "mul").value;
  if (x.shape() != y.shape()) mismatch("mul", x.shape(), y.shape());
  Tensor out = x;
  auto o = out.data();
  const auto yd = y.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= yd[i];
  Node r;
  r.op = Op::mul;
  r.a = a.id;
  r.b = b.id;
  r.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  r.value = std::move(out);
  return push(std::move(r));
}

Var Tape::add_bias(Var x, Var bias) {
  const auto& in = node(x, "add_bias").value;
  const auto& b = node(bias, "add_bias").value;
  if (in.rank() == 0 || b.rank() != 1 || b.dim(0) != in.shape().back()) mismatch("add_bias", in.shape(), b.shape());
  Tensor out = in;
  auto o = out.data();
  const auto bd = b.data();
  const std::size_t d = bd.size();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i % d];
  Node r;
  r.op = Op::add_bias;
  r.a = x.id;
  r.b = bias.id;
  r.needs_grad = nodes_[x.id].needs_grad || nodes_[bias.id].needs_grad;
  r.value = std::move(out);
  return push(std::move(r));
}

Var Tape::relu(Var x) {
  Tensor out = node(x, "relu").value;
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  Node r;
  r.op = Op::relu;
  r.a = x.id;
  r.needs_grad = nodes_[x.id].needs_grad;
  r.value = std::move(out);
  return push(std::move(r));
}

Var Tape::log_softmax(Var x) {
  const auto& in = node(x, "log_softmax").value;
  const std::size_t v = last_dim(in, "log_softmax");
  const std::size_t rows = in.size() / v;
  Tensor out(in.shape());
  std::vector<double> probs(in.size());
  const auto id = in.data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = id.data() + r * v;
    const double hi = *std::max_element(row, row + v);
    double total = 0.0;
    for (std::size_t c = 0; c < v; ++c) total += std::exp(row[c] - hi);
    const double lse = hi + std::log(total);
    for (std::size_t c = 0; c < v; ++c) {
      o[r * v + c] = row[c] - lse;
      probs[r * v + c] = std::exp(o[r * v + c]);
    }
  }
  Node r;
  r.op = Op::log_softmax;
  r.a = x.id;
  r.needs_grad = nodes_[x.id].needs_grad;
  r.value = std::move(out);
  r.saved = std::move(probs);
  return push(std::move(r));
}

Var Tape::gather(Var x, std::span<const std::size_t> classes) {
  const auto& in = node(x, "gather").value;
  const std::size_t v = last_dim(in, "gather");
  const std::size_t rows = in.size() / v;
  if (classes.size() != rows) {
    throw ShapeError(fmt::format("gather: shape mismatch {} vs [{}] class indices", shape_string(in.shape()), classes.size()));
  }
  Shape out_shape(in.shape().begin(), in.shape().end() - 1);
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    if (classes[r] >= v) throw std::out_of_range(fmt::format("gather: class {} outside [0,{})", classes[r], v));
    out[r] = in[r * v + classes[r]];
  }
  Node n;
  n.op = Op::gather;
  n.a = x.id;
  n.needs_grad = nodes_[x.id].needs_grad;
  n.value = std::move(out);
  n.index.assign(classes.begin(), classes.end());
  return push(std::move(n));
}

Var Tape::embedding(Var table, std::span<const std::size_t> rows) {
  const auto& t = node(table, "embedding").value;
  if (t.rank() != 2) mismatch("embedding", t.shape(), Shape{rows.size()});
  if (rows.empty()) throw ShapeError("embedding: no row indices");
  const std::size_t r_count = t.dim(0), e = t.dim(1);
  Tensor out(Shape{rows.size(), e});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= r_count) throw std::out_of_range(fmt::format("embedding: row {} outside [0,{})", rows[k], r_count));
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(rows[k] * e), e,
                out.data().begin() + static_cast<std::ptrdiff_t>(k * e));
  }
  Node n;
  n.op = Op::embedding;
  n.a = table.id;
  n.needs_grad = nodes_[table.id].needs_grad;
  n.value = std::move(out);
  n.index.assign(rows.begin(), rows.end());
  return push(std::move(n));
}

namespace {

/// For each input element, the flat index of the output element it reduces
/// into. Returns the output shape through `out_shape`.
std::vector<std::size_t> reduction_map(const Shape& shape, std::vector<std::size_t> axes, Shape& out_shape,
                                       const char* prim) {
  if (axes.empty()) {
    for (std::size_t i = 0; i < shape.size(); ++i) axes.push_back(i);
  }
  std::sort(axes.begin(), axes.end());
  if (std::adjacent_find(axes.begin(), axes.end()) != axes.end() || (!axes.empty() && axes.back() >= shape.size())) {
    throw ShapeError(fmt::format("{}: invalid axes for shape {}", prim, shape_string(shape)));
  }
  std::vector<bool> reduced(shape.size(), false);
  for (auto a : axes) reduced[a] = true;
  out_shape.clear();
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (!reduced[i]) out_shape.push_back(shape[i]);
  }
  const std::size_t n = shape_size(shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t out = 0;
    for (std::size_t d = 0; d < shape.size(); ++d) {
      if (!reduced[d]) out = out * shape[d] + idx[d];
    }
    map[flat] = out;
    for (std::size_t d = shape.size(); d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace

Var Tape::sum(Var x, std::vector<std::size_t> axes) {
  const auto& in = node(x, "sum").value;
  Shape out_shape;
  auto map = reduction_map(in.shape(), std::move(axes), out_shape, "sum");
  Tensor out(out_shape);
  for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] += in[i];
  Node n;
  n.op = Op::sum;
  n.a = x.id;
  n.needs_grad = nodes_[x.id].needs_grad;
  n.value = std::move(out);
  n.index = std::move(map);
  return push(std::move(n));
}

Var Tape::mean(Var x, std::vector<std::size_t> axes) {
  const auto& in = node(x, "mean").value;
  Shape out_shape;
  auto map = reduction_map(in.shape(), std::move(axes), out_shape, "mean");
  Tensor out(out_shape);
  const double count = static_cast<double>(in.size() / out.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] += in[i];
  for (auto& v : out.data()) v /= count;
  Node n;
  n.op = Op::mean;
  n.a = x.id;
  n.needs_grad = nodes_[x.id].needs_grad;
  n.value = std::move(out);
  n.index = std::move(map);
  n.saved = {count};
  return push(std::move(n));
}

Var Tape::dropout(Var x, double p, RngStream& rng, bool training) {
  const auto& in = node(x, "dropout").value;
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument(fmt::format("dropout: rate {} outside [0,1)", p));
  Node n;
  n.op = Op::dropout;
  n.a = x.id;
  n.needs_grad = nodes_[x.id].needs_grad;
  n.value = in;
  if (training) {
    const double scale = 1.0 / (1.0 - p);
    n.saved.resize(in.size());
    auto o = n.value.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
      const bool keep = rng.uniform() >= p;
      n.saved[i] = keep ? scale : 0.0;
      o[i] = keep ? o[i] * scale : 0.0;
    }
  }
  return push(std::move(n));
}

std::span<const double> Tape::dropout_mask(Var v) const {
  const auto& n = node(v, "dropout_mask");
  if (n.op != Op::dropout) throw std::invalid_argument("dropout_mask: node is not a dropout");
  return n.saved;
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw std::logic_error("backward: tape is empty");
  const auto& out = node(loss, "backward").value;
  if (out.size() != 1) throw ShapeError("backward: loss must be scalar, got shape " + shape_string(out.shape()));

  std::vector<std::vector<double>> grads(nodes_.size());
  auto grad_of = [&](std::size_t id) -> std::vector<double>& {
    auto& g = grads[id];
    if (g.empty()) g.assign(nodes_[id].value.size(), 0.0);
    return g;
  };
  grad_of(loss.id)[0] = 1.0;

  for (std::size_t id = loss.id + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!n.needs_grad || grads[id].empty()) continue;
    const auto& g = grads[id];
    switch (n.op) {
      case Op::constant:
      case Op::parameter:
        break;
      case Op::matmul: {
        const auto& x = nodes_[n.a].value;
        const auto& y = nodes_[n.b].value;
        const std::size_t rows = x.dim(0), k = x.dim(1), m = y.dim(1);
        if (nodes_[n.a].needs_grad) {
          auto& ga = grad_of(n.a);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * y[p * m + j];
              ga[i * k + p] += acc;
            }
        }
        if (nodes_[n.b].needs_grad) {
          auto& gb = grad_of(n.b);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double xv = x[i * k + p];
              if (xv == 0.0) continue;
              for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += xv * g[i * m + j];
            }
        }
        break;
      }
      case Op::add:
        for (auto src : {n.a, n.b}) {
          if (!nodes_[src].needs_grad) continue;
          auto& gs = grad_of(src);
          for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
        }
        break;
      case Op::mul: {
        const auto& x = nodes_[n.a].value;
        const auto& y = nodes_[n.b].value;
        if (nodes_[n.a].needs_grad) {
          auto& ga = grad_of(n.a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        }
        if (nodes_[n.b].needs_grad) {
          auto& gb = grad_of(n.b);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
        }
        break;
      }
      case Op::add_bias: {
        if (nodes_[n.a].needs_grad) {
          auto& ga = grad_of(n.a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (nodes_[n.b].needs_grad) {
          auto& gb = grad_of(n.b);
          const std::size_t d = gb.size();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
        }
        break;
      }
      case Op::relu: {
        auto& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (n.value[i] > 0.0) ga[i] += g[i];
        }
        break;
      }
      case Op::log_softmax: {
        auto& ga = grad_of(n.a);
        const std::size_t v = n.value.shape().back();
        const std::size_t rows = g.size() / v;
        for (std::size_t r = 0; r < rows; ++r) {
          double total = 0.0;
          for (std::size_t c = 0; c < v; ++c) total += g[r * v + c];
          for (std::size_t c = 0; c < v; ++c) ga[r * v + c] += g[r * v + c] - n.saved[r * v + c] * total;
        }
        break;
      }
      case Op::gather: {
        auto& ga = grad_of(n.a);
        const std::size_t v = nodes_[n.a].value.shape().back();
        for (std::size_t r = 0; r < g.size(); ++r) ga[r * v + n.index[r]] += g[r];
        break;
      }
      case Op::embedding: {
        auto& ga = grad_of(n.a);
        const std::size_t e = n.value.shape().back();
        for (std::size_t k = 0; k < n.index.size(); ++k)
          for (std::size_t j = 0; j < e; ++j) ga[n.index[k] * e + j] += g[k * e + j];
        break;
      }
      case Op::sum: {
        auto& ga = grad_of(n.a);
        for (std::size_t i = 0; i < n.index.size(); ++i) ga[i] += g[n.index[i]];
        break;
      }
      case Op::mean: {
        auto& ga = grad_of(n.a);
        const double count = n.saved[0];
        for (std::size_t i = 0; i < n.index.size(); ++i) ga[i] += g[n.index[i]] / count;
        break;
      }
      case Op::dropout: {
        auto& ga = grad_of(n.a);
        if (n.saved.empty()) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.saved[i];
        }
        break;
      }
    }
  }

  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.op != Op::parameter || n.bound == nullptr || !n.bound->requires_grad()) continue;
    if (!n.bound->has_grad()) n.bound->zero_grad();
    if (grads[id].empty()) continue;
    auto dst = n.bound->grad();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += grads[id][i];
  }
  clear();
}

}  // namespace spg::ad
