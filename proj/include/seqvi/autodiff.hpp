#pragma once

// Reverse-mode automatic differentiation over small dense double arrays.
//
// A Tensor is an immutable value. Tensors that belong to a Graph carry a node
// id; operations on them are recorded on that graph in creation order and
// `Graph::backward` replays the record in reverse. Tensors without a graph are
// constants, and operations on constants only compute values, which is how
// forward-only evaluation avoids building a tape at all.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace seqvi {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

// Raised when a forward result contains NaN or Inf. The message names the op.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace seqvi

namespace seqvi::ad {

class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::span<const std::size_t> dims);

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  std::size_t numel() const;
  std::span<const std::size_t> dims() const { return {dims_.data(), rank_}; }
  std::string str() const;

  // Drops the leading dimension.
  Shape tail() const;
  Shape with_leading(std::size_t n) const;

  friend bool operator==(const Shape& a, const Shape& b);

 private:
  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

struct Storage {
  Shape shape;
  std::vector<double> data;
};

using StoragePtr = std::shared_ptr<const Storage>;

class Graph;

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> data);
  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);

  const Shape& shape() const { return storage_->shape; }
  std::span<const double> data() const { return storage_->data; }
  std::size_t numel() const { return storage_->data.size(); }
  double operator[](std::size_t i) const { return storage_->data[i]; }
  // Value of a single-element tensor.
  double item() const;

  bool defined() const { return storage_ != nullptr; }
  bool requires_grad() const { return graph_ != nullptr; }
  Graph* graph() const { return graph_; }
  int node_id() const { return node_; }
  const StoragePtr& storage() const { return storage_; }

 private:
  friend class Graph;
  Tensor(StoragePtr s, Graph* g, int node) : storage_(std::move(s)), graph_(g), node_(node) {}

  StoragePtr storage_;
  Graph* graph_ = nullptr;
  int node_ = -1;
};

enum class OpKind : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Tanh,
  Sigmoid,
  Softplus,
  Exp,
  Log,
  MatMul,
  MatVec,
  Sum,
  Mean,
  LogSumExp,
  StopGradient,
  Slice,
  Concat,
  Reshape,
  Custom,
};

std::string_view op_name(OpKind k);

// Gradient rule for an op defined outside this file. `grad_inputs[i]` is null
// for inputs that do not need a gradient, otherwise it points at a buffer of
// the input's size to accumulate into.
using CustomBackward = std::function<void(std::span<const double> grad_out,
                                          std::span<const StoragePtr> inputs,
                                          const Storage& out,
                                          std::span<std::vector<double>*> grad_inputs)>;

// Per-leaf gradients, keyed by leaf node id.
class Gradients {
 public:
  const Tensor& at(const Tensor& leaf) const;
  const Tensor& at(int node_id) const;
  bool contains(int node_id) const { return grads_.count(node_id) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Graph;
  std::unordered_map<int, Tensor> grads_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // A differentiable input.
  Tensor leaf(const Tensor& value);
  Tensor leaf(StoragePtr value);

  std::size_t size() const { return nodes_.size(); }

  Gradients backward(const Tensor& loss) const;

  // Used by the op implementations; records a node and returns its tensor.
  struct Input {
    int id = -1;
    StoragePtr value;
  };
  Tensor record(OpKind kind, std::string_view name, std::vector<Input> inputs, Storage out,
                std::array<std::int64_t, 2> aux = {0, 0}, CustomBackward custom = {});

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<Input> inputs;
    StoragePtr out;
    std::array<std::int64_t, 2> aux{0, 0};
    CustomBackward custom;
  };

  void backprop_node(const Node& node, std::span<const double> g,
                     std::vector<std::vector<double>>& grads) const;

  std::vector<Node> nodes_;
};

// ---- elementwise ----------------------------------------------------------

// Binary ops accept equal shapes, or one operand whose shape equals the
// trailing dimensions of the other (a scalar broadcasts against anything).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

enum class Elementwise { Add, Sub, Mul, Div, Tanh, Sigmoid, Softplus, Exp, Log, Neg };
Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor& b = {});

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(double s, const Tensor& a) { return mul(Tensor::scalar(s), a); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n] -> [m,n]
Tensor matvec(const Tensor& a, const Tensor& x);  // [m,k] x [k]   -> [m]

// ---- reductions -----------------------------------------------------------

enum class Reduce { Sum, Mean, LogSumExp };

// Full reduction to a scalar when `axis` is negative.
Tensor reduce(Reduce kind, const Tensor& a, int axis = -1);
inline Tensor sum(const Tensor& a, int axis = -1) { return reduce(Reduce::Sum, a, axis); }
inline Tensor mean(const Tensor& a, int axis = -1) { return reduce(Reduce::Mean, a, axis); }
inline Tensor logsumexp(const Tensor& a, int axis = -1) {
  return reduce(Reduce::LogSumExp, a, axis);
}

// ---- structure ------------------------------------------------------------

Tensor stop_gradient(const Tensor& a);
// Rows [begin, begin + count) along the leading dimension.
Tensor slice(const Tensor& a, std::size_t begin, std::size_t count);
// Row `i` with the leading dimension dropped.
Tensor index(const Tensor& a, std::size_t i);
// Concatenation along the leading dimension; scalars count as length-1 rows.
Tensor concat(std::span<const Tensor> parts);
Tensor stack(std::span<const Tensor> rows);
Tensor reshape(const Tensor& a, Shape shape);

// Builds a node whose value and gradient rule are supplied by the caller.
Tensor custom(std::string_view name, std::span<const Tensor> inputs, Storage out,
              CustomBackward backward);

// Throws NonFiniteError naming `op` if any value is NaN or infinite.
void check_finite(std::string_view op, std::span<const double> values);

// ---- named parameters -----------------------------------------------------

class ParameterSet {
 public:
  std::size_t add(std::string name, Shape shape, std::vector<double> data);
  std::size_t size() const { return names_.size(); }
  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }
  void set(std::size_t i, std::vector<double> data);
  std::size_t total_numel() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

// Parameters as graph leaves, in ParameterSet order.
std::vector<Tensor> bind(Graph& g, const ParameterSet& params);
// Parameters as constants, for forward-only evaluation.
std::vector<Tensor> constants(const ParameterSet& params);
// Flat gradients aligned with `bound`; unreached leaves get zeros.
std::vector<std::vector<double>> collect(const Gradients& grads, std::span<const Tensor> bound);

}  // namespace seqvi::ad
