#include "seqvi/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace seqvi::ad {

// ---- Shape ----------------------------------------------------------------

Shape::Shape(std::initializer_list<std::size_t> dims)
    : Shape(std::span<const std::size_t>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const std::size_t> dims) {
  if (dims.size() > kMaxRank) throw ShapeError("tensor rank exceeds " + std::to_string(kMaxRank));
  std::copy(dims.begin(), dims.end(), dims_.begin());
  rank_ = dims.size();
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
  os << ']';
  return os.str();
}

Shape Shape::tail() const {
  if (rank_ == 0) throw ShapeError("cannot drop the leading dimension of a scalar");
  return Shape(std::span<const std::size_t>(dims_.data() + 1, rank_ - 1));
}

Shape Shape::with_leading(std::size_t n) const {
  if (rank_ + 1 > kMaxRank) throw ShapeError("tensor rank exceeds " + std::to_string(kMaxRank));
  Shape s;
  s.rank_ = rank_ + 1;
  s.dims_[0] = n;
  std::copy(dims_.begin(), dims_.begin() + static_cast<std::ptrdiff_t>(rank_), s.dims_.begin() + 1);
  return s;
}

bool operator==(const Shape& a, const Shape& b) {
  return a.rank_ == b.rank_ && std::equal(a.dims_.begin(), a.dims_.begin() + a.rank_, b.dims_.begin());
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> data) {
  if (shape.numel() != data.size()) {
    throw ShapeError("shape " + shape.str() + " does not match " + std::to_string(data.size()) +
                     " values");
  }
  return Tensor(std::make_shared<const Storage>(Storage{shape, std::move(data)}), nullptr, -1);
}

Tensor Tensor::scalar(double v) { return constant(Shape{}, {v}); }

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return constant(Shape{n}, std::move(v));
}

Tensor Tensor::zeros(Shape shape) { return full(shape, 0.0); }

Tensor Tensor::full(Shape shape, double v) {
  return constant(shape, std::vector<double>(shape.numel(), v));
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
  return storage_->data[0];
}

std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Neg: return "neg";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Softplus: return "softplus";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::MatMul: return "matmul";
    case OpKind::MatVec: return "matvec";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::LogSumExp: return "logsumexp";
    case OpKind::StopGradient: return "stop_gradient";
    case OpKind::Slice: return "slice";
    case OpKind::Concat: return "concat";
    case OpKind::Reshape: return "reshape";
    case OpKind::Custom: return "custom";
  }
  return "?";
}

void check_finite(std::string_view op, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NonFiniteError("non-finite value produced by op '" + std::string(op) + "'");
    }
  }
}

// ---- Gradients ------------------------------------------------------------

const Tensor& Gradients::at(const Tensor& leaf) const { return at(leaf.node_id()); }

const Tensor& Gradients::at(int node_id) const {
  auto it = grads_.find(node_id);
  if (it == grads_.end()) throw Error("no gradient recorded for node " + std::to_string(node_id));
  return it->second;
}

// ---- Graph ----------------------------------------------------------------

Tensor Graph::leaf(const Tensor& value) { return leaf(value.storage()); }

Tensor Graph::leaf(StoragePtr value) {
  Node n;
  n.kind = OpKind::Leaf;
  n.out = value;
  nodes_.push_back(std::move(n));
  return Tensor(std::move(value), this, static_cast<int>(nodes_.size() - 1));
}

Tensor Graph::record(OpKind kind, std::string_view name, std::vector<Input> inputs, Storage out,
                     std::array<std::int64_t, 2> aux, CustomBackward custom) {
  check_finite(name, out.data);
  auto value = std::make_shared<const Storage>(std::move(out));
  Node n;
  n.kind = kind;
  n.inputs = std::move(inputs);
  n.out = value;
  n.aux = aux;
  n.custom = std::move(custom);
  nodes_.push_back(std::move(n));
  return Tensor(std::move(value), this, static_cast<int>(nodes_.size() - 1));
}

namespace {

Graph* common_graph(std::span<const Tensor* const> ts) {
  Graph* g = nullptr;
  for (const Tensor* t : ts) {
    if (t == nullptr || !t->defined() || t->graph() == nullptr) continue;
    if (g != nullptr && g != t->graph()) throw Error("operands belong to different graphs");
    g = t->graph();
  }
  return g;
}

// Records the op on the operands' graph, or returns a constant when no
// operand is differentiable.
Tensor finish(OpKind kind, std::string_view name, std::initializer_list<const Tensor*> ins,
              Storage out, std::array<std::int64_t, 2> aux = {0, 0}, CustomBackward cb = {}) {
  std::vector<const Tensor*> list(ins);
  Graph* g = common_graph(list);
  if (g == nullptr) {
    check_finite(name, out.data);
    return Tensor::constant(out.shape, std::move(out.data));
  }
  std::vector<Graph::Input> inputs;
  inputs.reserve(list.size());
  for (const Tensor* t : list) inputs.push_back({t->node_id(), t->storage()});
  return g->record(kind, name, std::move(inputs), std::move(out), aux, std::move(cb));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.rank() > big.rank()) return false;
  const std::size_t off = big.rank() - small.rank();
  for (std::size_t i = 0; i < small.rank(); ++i) {
    if (small[i] != big[off + i]) return false;
  }
  return true;
}

Shape broadcast_shape(std::string_view op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw ShapeError(std::string(op) + ": shapes " + a.str() + " and " + b.str() +
                   " are not broadcast-compatible");
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Accumulates an output-shaped gradient into a possibly broadcast input.
void accumulate_broadcast(std::vector<double>& dst, std::span<const double> g,
                          const std::function<double(std::size_t)>& scale) {
  const std::size_t m = dst.size();
  if (m == g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * scale(i);
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i % m] += g[i] * scale(i);
  }
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r;
  if (axis < 0) {
    r.n = s.numel();
    return r;
  }
  const auto ax = static_cast<std::size_t>(axis);
  if (ax >= s.rank()) throw ShapeError("reduction axis out of range for shape " + s.str());
  for (std::size_t i = 0; i < ax; ++i) r.outer *= s[i];
  r.n = s[ax];
  for (std::size_t i = ax + 1; i < s.rank(); ++i) r.inner *= s[i];
  return r;
}

Shape reduced_shape(const Shape& s, int axis) {
  if (axis < 0) return Shape{};
  std::vector<std::size_t> dims;
  for (std::size_t i = 0; i < s.rank(); ++i) {
    if (static_cast<int>(i) != axis) dims.push_back(s[i]);
  }
  return Shape(std::span<const std::size_t>(dims));
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

namespace {

Tensor binary(OpKind kind, const Tensor& a, const Tensor& b) {
  const std::string_view name = op_name(kind);
  if (!a.defined() || !b.defined()) throw Error(std::string(name) + ": undefined operand");
  const Shape out_shape = broadcast_shape(name, a.shape(), b.shape());
  const std::size_t n = out_shape.numel();
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t na = ad.size(), nb = bd.size();
  std::vector<double> out(n);
  switch (kind) {
    case OpKind::Add:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] + bd[i % nb];
      break;
    case OpKind::Sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] - bd[i % nb];
      break;
    case OpKind::Mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] * bd[i % nb];
      break;
    case OpKind::Div:
      for (std::size_t i = 0; i < nb; ++i) {
        if (bd[i] == 0.0) throw DomainError("div: division by zero");
      }
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] / bd[i % nb];
      break;
    default:
      throw Error("not a binary op");
  }
  return finish(kind, name, {&a, &b}, Storage{out_shape, std::move(out)});
}

Tensor unary(OpKind kind, const Tensor& a) {
  const std::string_view name = op_name(kind);
  if (!a.defined()) throw Error(std::string(name) + ": undefined operand");
  const auto x = a.data();
  std::vector<double> out(x.size());
  switch (kind) {
    case OpKind::Neg:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = -x[i];
      break;
    case OpKind::Tanh:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
      break;
    case OpKind::Sigmoid:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = stable_sigmoid(x[i]);
      break;
    case OpKind::Softplus:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = stable_softplus(x[i]);
      break;
    case OpKind::Exp:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::exp(x[i]);
      break;
    case OpKind::Log:
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0)) throw DomainError("log: non-positive argument");
        out[i] = std::log(x[i]);
      }
      break;
    default:
      throw Error("not a unary op");
  }
  return finish(kind, name, {&a}, Storage{a.shape(), std::move(out)});
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(OpKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(OpKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(OpKind::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(OpKind::Div, a, b); }
Tensor neg(const Tensor& a) { return unary(OpKind::Neg, a); }
Tensor tanh(const Tensor& a) { return unary(OpKind::Tanh, a); }
Tensor sigmoid(const Tensor& a) { return unary(OpKind::Sigmoid, a); }
Tensor softplus(const Tensor& a) { return unary(OpKind::Softplus, a); }
Tensor exp(const Tensor& a) { return unary(OpKind::Exp, a); }
Tensor log(const Tensor& a) { return unary(OpKind::Log, a); }

Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor& b) {
  switch (kind) {
    case Elementwise::Add: return add(a, b);
    case Elementwise::Sub: return sub(a, b);
    case Elementwise::Mul: return mul(a, b);
    case Elementwise::Div: return div(a, b);
    case Elementwise::Tanh: return tanh(a);
    case Elementwise::Sigmoid: return sigmoid(a);
    case Elementwise::Softplus: return softplus(a);
    case Elementwise::Exp: return exp(a);
    case Elementwise::Log: return log(a);
    case Elementwise::Neg: return neg(a);
  }
  throw Error("unknown elementwise op");
}

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().rank() != 2 || b.shape().rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: cannot multiply " + a.shape().str() + " by " + b.shape().str());
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> C(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) C[i * n + j] += aip * B[p * n + j];
    }
  }
  return finish(OpKind::MatMul, "matmul", {&a, &b}, Storage{Shape{m, n}, std::move(C)});
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  if (a.shape().rank() != 2 || x.shape().rank() != 1 || a.shape()[1] != x.shape()[0]) {
    throw ShapeError("matvec: cannot multiply " + a.shape().str() + " by " + x.shape().str());
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const auto A = a.data();
  const auto X = x.data();
  std::vector<double> y(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * X[p];
    y[i] = s;
  }
  return finish(OpKind::MatVec, "matvec", {&a, &x}, Storage{Shape{m}, std::move(y)});
}

// ---- reductions -----------------------------------------------------------

Tensor reduce(Reduce kind, const Tensor& a, int axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (s.n == 0) throw ShapeError("reduction over an empty axis");
  const auto x = a.data();
  std::vector<double> out(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.inner; ++j) {
      auto at = [&](std::size_t q) { return x[(o * s.n + q) * s.inner + j]; };
      double r = 0.0;
      if (kind == Reduce::LogSumExp) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t q = 0; q < s.n; ++q) m = std::max(m, at(q));
        double acc = 0.0;
        for (std::size_t q = 0; q < s.n; ++q) acc += std::exp(at(q) - m);
        r = m + std::log(acc);
      } else {
        for (std::size_t q = 0; q < s.n; ++q) r += at(q);
        if (kind == Reduce::Mean) r /= static_cast<double>(s.n);
      }
      out[o * s.inner + j] = r;
    }
  }
  const OpKind k = kind == Reduce::Sum    ? OpKind::Sum
                   : kind == Reduce::Mean ? OpKind::Mean
                                          : OpKind::LogSumExp;
  return finish(k, op_name(k), {&a}, Storage{reduced_shape(a.shape(), axis), std::move(out)},
                {axis, 0});
}

// ---- structure ------------------------------------------------------------

Tensor stop_gradient(const Tensor& a) {
  return Tensor::constant(a.shape(), std::vector<double>(a.data().begin(), a.data().end()));
}

namespace {

Tensor slice_impl(const Tensor& a, std::size_t begin, std::size_t count, Shape out_shape) {
  const Shape& s = a.shape();
  if (s.rank() == 0) throw ShapeError("slice: cannot slice a scalar");
  if (begin + count > s[0]) {
    throw ShapeError("slice: rows [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                     ") out of range for shape " + s.str());
  }
  const std::size_t row = s.numel() / std::max<std::size_t>(s[0], 1);
  const auto x = a.data();
  std::vector<double> out(x.begin() + static_cast<std::ptrdiff_t>(begin * row),
                          x.begin() + static_cast<std::ptrdiff_t>((begin + count) * row));
  return finish(OpKind::Slice, "slice", {&a}, Storage{out_shape, std::move(out)},
                {static_cast<std::int64_t>(begin * row), 0});
}

}  // namespace

Tensor slice(const Tensor& a, std::size_t begin, std::size_t count) {
  if (a.shape().rank() == 0) throw ShapeError("slice: cannot slice a scalar");
  Shape out = a.shape().tail().with_leading(count);
  return slice_impl(a, begin, count, out);
}

Tensor index(const Tensor& a, std::size_t i) {
  if (a.shape().rank() == 0) throw ShapeError("index: cannot index a scalar");
  return slice_impl(a, i, 1, a.shape().tail());
}

namespace {

Tensor concat_impl(std::span<const Tensor> parts, Shape out_shape) {
  std::vector<double> out;
  out.reserve(out_shape.numel());
  Graph* g = nullptr;
  for (const Tensor& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    if (p.graph() != nullptr) {
      if (g != nullptr && g != p.graph()) throw Error("operands belong to different graphs");
      g = p.graph();
    }
  }
  if (g == nullptr) return Tensor::constant(out_shape, std::move(out));
  std::vector<Graph::Input> inputs;
  inputs.reserve(parts.size());
  for (const Tensor& p : parts) inputs.push_back({p.node_id(), p.storage()});
  return g->record(OpKind::Concat, "concat", std::move(inputs), Storage{out_shape, std::move(out)});
}

}  // namespace

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::size_t rows = 0;
  Shape row_shape;
  bool first = true;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    const Shape tail = s.rank() == 0 ? Shape{} : s.tail();
    if (first) {
      row_shape = tail;
      first = false;
    } else if (!(tail == row_shape)) {
      throw ShapeError("concat: incompatible part shape " + s.str());
    }
    rows += s.rank() == 0 ? 1 : s[0];
  }
  return concat_impl(parts, row_shape.with_leading(rows));
}

Tensor stack(std::span<const Tensor> rows) {
  if (rows.empty()) throw ShapeError("stack: no inputs");
  for (const Tensor& r : rows) {
    if (!(r.shape() == rows[0].shape())) throw ShapeError("stack: rows differ in shape");
  }
  return concat_impl(rows, rows[0].shape().with_leading(rows.size()));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape.numel() != a.numel()) {
    throw ShapeError("reshape: " + a.shape().str() + " to " + shape.str());
  }
  return finish(OpKind::Reshape, "reshape", {&a},
                Storage{shape, std::vector<double>(a.data().begin(), a.data().end())});
}

Tensor custom(std::string_view name, std::span<const Tensor> inputs, Storage out,
              CustomBackward backward) {
  Graph* g = nullptr;
  for (const Tensor& t : inputs) {
    if (t.graph() != nullptr) {
      if (g != nullptr && g != t.graph()) throw Error("operands belong to different graphs");
      g = t.graph();
    }
  }
  if (g == nullptr) {
    check_finite(name, out.data);
    return Tensor::constant(out.shape, std::move(out.data));
  }
  std::vector<Graph::Input> ins;
  ins.reserve(inputs.size());
  for (const Tensor& t : inputs) ins.push_back({t.node_id(), t.storage()});
  return g->record(OpKind::Custom, name, std::move(ins), std::move(out), {0, 0},
                   std::move(backward));
}

// ---- backward -------------------------------------------------------------

void Graph::backprop_node(const Node& node, std::span<const double> g,
                          std::vector<std::vector<double>>& grads) const {
  auto buf = [&](std::size_t i) -> std::vector<double>* {
    const Input& in = node.inputs[i];
    if (in.id < 0) return nullptr;
    auto& v = grads[static_cast<std::size_t>(in.id)];
    if (v.empty()) v.assign(in.value->data.size(), 0.0);
    return &v;
  };
  const auto y = std::span<const double>(node.out->data);

  switch (node.kind) {
    case OpKind::Leaf:
      return;
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
    case OpKind::Div: {
      const auto a = std::span<const double>(node.inputs[0].value->data);
      const auto b = std::span<const double>(node.inputs[1].value->data);
      const std::size_t na = a.size(), nb = b.size();
      if (auto* ga = buf(0)) {
        switch (node.kind) {
          case OpKind::Add:
          case OpKind::Sub: accumulate_broadcast(*ga, g, [](std::size_t) { return 1.0; }); break;
          case OpKind::Mul: accumulate_broadcast(*ga, g, [&](std::size_t i) { return b[i % nb]; }); break;
          default: accumulate_broadcast(*ga, g, [&](std::size_t i) { return 1.0 / b[i % nb]; }); break;
        }
      }
      if (auto* gb = buf(1)) {
        switch (node.kind) {
          case OpKind::Add: accumulate_broadcast(*gb, g, [](std::size_t) { return 1.0; }); break;
          case OpKind::Sub: accumulate_broadcast(*gb, g, [](std::size_t) { return -1.0; }); break;
          case OpKind::Mul: accumulate_broadcast(*gb, g, [&](std::size_t i) { return a[i % na]; }); break;
          default:
            accumulate_broadcast(*gb, g, [&](std::size_t i) {
              const double bi = b[i % nb];
              return -a[i % na] / (bi * bi);
            });
            break;
        }
      }
      return;
    }
    case OpKind::Neg:
    case OpKind::Tanh:
    case OpKind::Sigmoid:
    case OpKind::Softplus:
    case OpKind::Exp:
    case OpKind::Log: {
      auto* ga = buf(0);
      if (ga == nullptr) return;
      const auto x = std::span<const double>(node.inputs[0].value->data);
      auto& d = *ga;
      for (std::size_t i = 0; i < g.size(); ++i) {
        double dy = 0.0;
        switch (node.kind) {
          case OpKind::Neg: dy = -1.0; break;
          case OpKind::Tanh: dy = 1.0 - y[i] * y[i]; break;
          case OpKind::Sigmoid: dy = y[i] * (1.0 - y[i]); break;
          case OpKind::Softplus: dy = stable_sigmoid(x[i]); break;
          case OpKind::Exp: dy = y[i]; break;
          default: dy = 1.0 / x[i]; break;
        }
        d[i] += g[i] * dy;
      }
      return;
    }
    case OpKind::MatMul: {
      const auto A = std::span<const double>(node.inputs[0].value->data);
      const auto B = std::span<const double>(node.inputs[1].value->data);
      const Shape& sa = node.inputs[0].value->shape;
      const Shape& sb = node.inputs[1].value->shape;
      const std::size_t m = sa[0], k = sa[1], n = sb[1];
      if (auto* ga = buf(0)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
            (*ga)[i * k + p] += s;
          }
      }
      if (auto* gb = buf(1)) {
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < m; ++i) s += A[i * k + p] * g[i * n + j];
            (*gb)[p * n + j] += s;
          }
      }
      return;
    }
    case OpKind::MatVec: {
      const auto A = std::span<const double>(node.inputs[0].value->data);
      const auto X = std::span<const double>(node.inputs[1].value->data);
      const std::size_t m = node.inputs[0].value->shape[0], k = node.inputs[0].value->shape[1];
      if (auto* ga = buf(0)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) (*ga)[i * k + p] += g[i] * X[p];
      }
      if (auto* gx = buf(1)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) (*gx)[p] += A[i * k + p] * g[i];
      }
      return;
    }
    case OpKind::Sum:
    case OpKind::Mean:
    case OpKind::LogSumExp: {
      auto* ga = buf(0);
      if (ga == nullptr) return;
      const auto x = std::span<const double>(node.inputs[0].value->data);
      const AxisSplit s = split_axis(node.inputs[0].value->shape, static_cast<int>(node.aux[0]));
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t j = 0; j < s.inner; ++j) {
          const std::size_t oi = o * s.inner + j;
          for (std::size_t q = 0; q < s.n; ++q) {
            const std::size_t xi = (o * s.n + q) * s.inner + j;
            double dy = 1.0;
            if (node.kind == OpKind::Mean) dy = 1.0 / static_cast<double>(s.n);
            if (node.kind == OpKind::LogSumExp) dy = std::exp(x[xi] - y[oi]);
            (*ga)[xi] += g[oi] * dy;
          }
        }
      return;
    }
    case OpKind::Slice: {
      auto* ga = buf(0);
      if (ga == nullptr) return;
      const auto off = static_cast<std::size_t>(node.aux[0]);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[off + i] += g[i];
      return;
    }
    case OpKind::Concat: {
      std::size_t off = 0;
      for (std::size_t p = 0; p < node.inputs.size(); ++p) {
        const std::size_t len = node.inputs[p].value->data.size();
        if (auto* gp = buf(p)) {
          for (std::size_t i = 0; i < len; ++i) (*gp)[i] += g[off + i];
        }
        off += len;
      }
      return;
    }
    case OpKind::Reshape: {
      if (auto* ga = buf(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      }
      return;
    }
    case OpKind::StopGradient:
      return;
    case OpKind::Custom: {
      std::vector<StoragePtr> ins;
      std::vector<std::vector<double>*> gins;
      ins.reserve(node.inputs.size());
      gins.reserve(node.inputs.size());
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        ins.push_back(node.inputs[i].value);
        gins.push_back(buf(i));
      }
      node.custom(g, ins, *node.out, gins);
      return;
    }
  }
}

Gradients Graph::backward(const Tensor& loss) const {
  if (!loss.defined() || loss.graph() == nullptr) {
    throw Error("backward: loss is not attached to a graph");
  }
  if (loss.graph() != this) throw Error("backward: loss belongs to another graph");
  if (loss.numel() != 1) throw ShapeError("backward: loss must be a scalar, got " + loss.shape().str());

  const auto root = static_cast<std::size_t>(loss.node_id());
  std::vector<std::vector<double>> grads(root + 1);
  grads[root] = {1.0};
  for (std::size_t i = root + 1; i-- > 0;) {
    if (grads[i].empty()) continue;
    const Node& node = nodes_[i];
    if (node.kind == OpKind::Leaf) continue;
    backprop_node(node, grads[i], grads);
    // Interior gradients are no longer needed once propagated.
    std::vector<double>().swap(grads[i]);
  }

  Gradients out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind != OpKind::Leaf) continue;
    const Shape& s = nodes_[i].out->shape;
    if (i < grads.size() && !grads[i].empty()) {
      out.grads_.emplace(static_cast<int>(i), Tensor::constant(s, std::move(grads[i])));
    } else {
      out.grads_.emplace(static_cast<int>(i), Tensor::zeros(s));
    }
  }
  return out;
}

// ---- parameters -----------------------------------------------------------

std::size_t ParameterSet::add(std::string name, Shape shape, std::vector<double> data) {
  if (contains(name)) throw Error("duplicate parameter name '" + name + "'");
  Tensor value = Tensor::constant(shape, std::move(data));
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return names_.size() - 1;
}

std::size_t ParameterSet::index(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  throw Error("unknown parameter '" + std::string(name) + "'");
}

bool ParameterSet::contains(std::string_view name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

void ParameterSet::set(std::size_t i, std::vector<double> data) {
  values_.at(i) = Tensor::constant(values_[i].shape(), std::move(data));
}

std::size_t ParameterSet::total_numel() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.numel();
  return n;
}

std::vector<Tensor> bind(Graph& g, const ParameterSet& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back(g.leaf(params.value(i)));
  return out;
}

std::vector<Tensor> constants(const ParameterSet& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back(params.value(i));
  return out;
}

std::vector<std::vector<double>> collect(const Gradients& grads, std::span<const Tensor> bound) {
  std::vector<std::vector<double>> out;
  out.reserve(bound.size());
  for (const Tensor& t : bound) {
    if (t.graph() != nullptr && grads.contains(t.node_id())) {
      const auto d = grads.at(t).data();
      out.emplace_back(d.begin(), d.end());
    } else {
      out.emplace_back(t.numel(), 0.0);
    }
  }
  return out;
}

}  // namespace seqvi::ad
