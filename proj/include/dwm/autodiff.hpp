#pragma once

// Minimal define-by-run reverse-mode automatic differentiation over dense
// row-major tensors of doubles.
//
// A Var is a handle to a graph node. Nodes created from inputs that do not
// require gradients keep no references to those inputs, so evaluation with
// constant parameters builds no graph at all and memory is released as soon
// as intermediate handles go out of scope. Graphs are single-threaded; build
// independent graphs on independent threads.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dwm::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Matrix accessors; valid for rank-2 tensors only.
  std::size_t rows() const;
  std::size_t cols() const;
  double at(std::size_t row, std::size_t col) const { return data_[row * shape_[1] + col]; }
  double& at(std::size_t row, std::size_t col) { return data_[row * shape_[1] + col]; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  // Copy of row `r` of a rank-2 tensor, as a vector.
  Tensor row(std::size_t r) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{0};
  std::vector<double> data_;
};

enum class Op : std::uint8_t {
  Leaf,
  MatVec,
  Outer,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Sigmoid,
  Softplus,
  Tanh,
  Exp,
  Log,
  Scale,
  AddScalar,
  Clamp,
  Softmax,
  Sum,
  Concat,
  Slice,
  CircularConv,
};

struct Node;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  // Gradient accumulated by backward(); empty until the first backward pass
  // that reaches this node.
  std::span<const double> grad() const;
  void zero_grad();

  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

 private:
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend class NodeAccess;
};

// Leaves.
Var parameter(Tensor value);
Var constant(Tensor value);
Var constant(double value);

// Linear algebra.
Var matvec(const Var& matrix, const Var& vector);
Var outer(const Var& u, const Var& v);

// Elementwise arithmetic. Operands must have equal shape, or one of them
// must hold a single element (scalar broadcast).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var pow(const Var& base, const Var& exponent);
Var pow(const Var& base, double exponent);

Var sigmoid(const Var& x);
Var softplus(const Var& x);
Var tanh(const Var& x);
Var exp(const Var& x);
// Throws DomainError if any element is <= 0.
Var log(const Var& x);

Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double offset);
// 1 - x
Var one_minus(const Var& x);
// Values outside [lo, hi] are clamped and receive zero gradient.
Var clamp(const Var& x, double lo, double hi);

// Vector ops.
Var softmax(const Var& x);
Var sum(const Var& x);
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
Var slice(const Var& x, std::size_t offset, std::size_t length);
Var element(const Var& x, std::size_t index);

// Circular convolution of an address weighting `w` (length A) with a kernel
// `s` of odd length K. Kernel entry k moves mass by offset k - K/2:
//   out[i] = sum_k s[k] * w[(i - (k - K/2)) mod A]
Var circular_conv(const Var& w, const Var& s);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

// Reverse-mode sweep from a single-element `loss`. Leaf gradients accumulate
// across calls; interior gradients are recomputed each call.
void backward(const Var& loss);

}  // namespace dwm::ad
