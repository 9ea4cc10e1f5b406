#include "dwm/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

#include "dwm/errors.hpp"

namespace dwm::ad {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows() on tensor of shape " + shape_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols() on tensor of shape " + shape_string(shape_));
  return shape_[1];
}

Tensor Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  if (r >= rows()) throw DimensionError("row index out of range");
  return Tensor::vector(std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(r * c),
                                            data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)));
}

// ---------------------------------------------------------------------------
// Graph nodes

struct Node {
  Tensor value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> inputs;
  Op op = Op::Leaf;
  bool requires_grad = false;
  double arg0 = 0.0;
  double arg1 = 0.0;
  std::size_t offset = 0;
  std::uint64_t mark = 0;

  Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  // Unrolled recurrences produce input chains thousands of nodes deep;
  // release them iteratively instead of through recursive destructors.
  ~Node() {
    std::vector<std::shared_ptr<Node>> pending = std::move(inputs);
    while (!pending.empty()) {
      std::shared_ptr<Node> n = std::move(pending.back());
      pending.pop_back();
      if (n && n.use_count() == 1) {
        for (auto& child : n->inputs) pending.push_back(std::move(child));
        n->inputs.clear();
      }
    }
  }
};

class NodeAccess {
 public:
  static const std::shared_ptr<Node>& get(const Var& v) {
    if (!v.node_) throw ContractError("use of an empty Var");
    return v.node_;
  }
  static Var wrap(std::shared_ptr<Node> n) { return Var(std::move(n)); }
};

namespace {

std::atomic<std::uint64_t> g_backward_epoch{0};

const Node& node_of(const Var& v) { return *NodeAccess::get(v); }

Var make_node(Op op, Tensor value, std::initializer_list<const Var*> inputs, double arg0 = 0.0,
              double arg1 = 0.0, std::size_t offset = 0) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->value = std::move(value);
  n->arg0 = arg0;
  n->arg1 = arg1;
  n->offset = offset;
  for (const Var* in : inputs) n->requires_grad = n->requires_grad || node_of(*in).requires_grad;
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (const Var* in : inputs) n->inputs.push_back(NodeAccess::get(*in));
  }
  return NodeAccess::wrap(std::move(n));
}

Var make_node_from(Op op, Tensor value, std::span<const Var> inputs) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->value = std::move(value);
  for (const Var& in : inputs) n->requires_grad = n->requires_grad || node_of(in).requires_grad;
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (const Var& in : inputs) n->inputs.push_back(NodeAccess::get(in));
  }
  return NodeAccess::wrap(std::move(n));
}

void require_vector(const Tensor& t, const char* what) {
  if (t.rank() != 1) throw DimensionError(std::string(what) + ": expected a vector, got " + shape_string(t.shape()));
}

// Output shape for an elementwise binary op with scalar broadcast.
const Shape& broadcast_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() == b.shape()) return a.shape();
  // A scalar against a one-element vector keeps the higher rank.
  if (a.size() == 1 && b.size() == 1) return a.rank() >= b.rank() ? a.shape() : b.shape();
  if (b.size() == 1) return a.shape();
  if (a.size() == 1) return b.shape();
  throw DimensionError(std::string(what) + ": shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                       " are not broadcast-compatible");
}

template <typename F>
Tensor binary_map(const Tensor& a, const Tensor& b, const char* what, F f) {
  Tensor out(broadcast_shape(a, b, what));
  const std::size_t n = out.size();
  const bool sa = a.size() == 1 && n != 1;
  const bool sb = b.size() == 1 && n != 1;
  for (std::size_t i = 0; i < n; ++i) out[i] = f(a[sa ? 0 : i], b[sb ? 0 : i]);
  return out;
}

template <typename F>
Tensor unary_map(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  // log(1 + e^x) without overflow for large |x|.
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

std::vector<double>& ensure_grad(Node& n) {
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

// Accumulate the gradient of a broadcast operand: either elementwise or
// summed into its single element.
template <typename F>
void accumulate_binary(Node& operand, std::size_t n, F contribution) {
  if (!operand.requires_grad) return;
  auto& g = ensure_grad(operand);
  if (operand.value.size() == 1 && n != 1) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += contribution(i);
    g[0] += s;
  } else {
    for (std::size_t i = 0; i < n; ++i) g[i] += contribution(i);
  }
}

void propagate(Node& node) {
  const std::vector<double>& gout = node.grad;
  const Tensor& out = node.value;
  const std::size_t n = out.size();
  auto in = [&](std::size_t k) -> Node& { return *node.inputs[k]; };
  auto val = [&](std::size_t k, std::size_t i) {
    const Tensor& v = node.inputs[k]->value;
    return v.size() == 1 ? v[0] : v[i];
  };

  switch (node.op) {
    case Op::Leaf:
      return;

    case Op::MatVec: {
      Node& w = in(0);
      Node& v = in(1);
      const std::size_t m = w.value.shape()[0];
      const std::size_t k = w.value.shape()[1];
      if (w.requires_grad) {
        auto& gw = ensure_grad(w);
        for (std::size_t i = 0; i < m; ++i) {
          const double gi = gout[i];
          if (gi == 0.0) continue;
          double* row = gw.data() + i * k;
          for (std::size_t j = 0; j < k; ++j) row[j] += gi * v.value[j];
        }
      }
      if (v.requires_grad) {
        auto& gv = ensure_grad(v);
        for (std::size_t i = 0; i < m; ++i) {
          const double gi = gout[i];
          if (gi == 0.0) continue;
          const double* row = w.value.data().data() + i * k;
          for (std::size_t j = 0; j < k; ++j) gv[j] += row[j] * gi;
        }
      }
      return;
    }

    case Op::Outer: {
      Node& u = in(0);
      Node& v = in(1);
      const std::size_t m = u.value.size();
      const std::size_t k = v.value.size();
      if (u.requires_grad) {
        auto& gu = ensure_grad(u);
        for (std::size_t i = 0; i < m; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < k; ++j) s += gout[i * k + j] * v.value[j];
          gu[i] += s;
        }
      }
      if (v.requires_grad) {
        auto& gv = ensure_grad(v);
        for (std::size_t i = 0; i < m; ++i) {
          const double ui = u.value[i];
          for (std::size_t j = 0; j < k; ++j) gv[j] += gout[i * k + j] * ui;
        }
      }
      return;
    }

    case Op::Add:
      accumulate_binary(in(0), n, [&](std::size_t i) { return gout[i]; });
      accumulate_binary(in(1), n, [&](std::size_t i) { return gout[i]; });
      return;

    case Op::Sub:
      accumulate_binary(in(0), n, [&](std::size_t i) { return gout[i]; });
      accumulate_binary(in(1), n, [&](std::size_t i) { return -gout[i]; });
      return;

    case Op::Mul:
      accumulate_binary(in(0), n, [&](std::size_t i) { return gout[i] * val(1, i); });
      accumulate_binary(in(1), n, [&](std::size_t i) { return gout[i] * val(0, i); });
      return;

    case Op::Div:
      accumulate_binary(in(0), n, [&](std::size_t i) { return gout[i] / val(1, i); });
      accumulate_binary(in(1), n, [&](std::size_t i) { return -gout[i] * out[i] / val(1, i); });
      return;

    case Op::Pow:
      accumulate_binary(in(0), n, [&](std::size_t i) {
        const double b = val(0, i);
        const double e = val(1, i);
        return gout[i] * e * std::pow(b, e - 1.0);
      });
      accumulate_binary(in(1), n, [&](std::size_t i) {
        const double b = val(0, i);
        return b > 0.0 ? gout[i] * out[i] * std::log(b) : 0.0;
      });
      return;

    case Op::Sigmoid: {
      Node& x = in(0);
      auto& g = ensure_grad(x);
      for (std::size_t i = 0; i < n; ++i) g[i] += gout[i] * out[i] * (1.0 - out[i]);
      return;
    }
    case Op::Softplus: {
      Node& x = in(0);
      auto& g = ensure_grad(x);
      for (std::size_t i = 0; i < n; ++i) g[i] += gout[i] * sigmoid_scalar(x.value[i]);
      return;
    }
    case Op::Tanh: {
      Node& x = in(0);
      auto& g = ensure_grad(x);
      for (std::size_t i = 0; i < n; ++i) g[i] += gout[i] * (1.0 - out[i] * out[i]);
      return;
    }
    case Op::Exp: {
      Node& x = in(0);
      auto& g = ensure_grad(x);
      for (std::size_t i = 0; i < n; ++i) g[i] += gout[i] * out[i];
      return;
    }
    case Op::Log: {
      Node& x = in(0);
      auto& g = ensure_grad(x);
      for (std::size_t i = 0; i < n; ++i) g[i] += gout[i] / x.value[i];
      return;
    }
    case Op::Scale: {
      Node& x = in(0);
      auto& g = ensure_grad(x);
      for (std::size_t i = 0; i < n; ++i) g[i] += gout[i] * node.arg0;
      return;
    }
    case Op::AddScalar: {
      Node& x = in(0);
      auto& g = ensure_grad(x);
      for (std::size_t i = 0; i < n; ++i) g[i] += gout[i];
      return;
    }
    case Op::Clamp: {
      Node& x = in(0);
      auto& g = ensure_grad(x);
      for (std::size_t i = 0; i < n; ++i) {
        const double xi = x.value[i];
        if (xi >= node.arg0 && xi <= node.arg1) g[i] += gout[i];
      }
      return;
    }
    case Op::Softmax: {
      Node& x = in(0);
      auto& g = ensure_grad(x);
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += gout[i] * out[i];
      for (std::size_t i = 0; i < n; ++i) g[i] += out[i] * (gout[i] - dot);
      return;
    }
    case Op::Sum: {
      Node& x = in(0);
      auto& g = ensure_grad(x);
      for (double& gi : g) gi += gout[0];
      return;
    }
    case Op::Concat: {
      std::size_t pos = 0;
      for (auto& part : node.inputs) {
        const std::size_t len = part->value.size();
        if (part->requires_grad) {
          auto& g = ensure_grad(*part);
          for (std::size_t i = 0; i < len; ++i) g[i] += gout[pos + i];
        }
        pos += len;
      }
      return;
    }
    case Op::Slice: {
      Node& x = in(0);
      auto& g = ensure_grad(x);
      for (std::size_t i = 0; i < n; ++i) g[node.offset + i] += gout[i];
      return;
    }
    case Op::CircularConv: {
      Node& w = in(0);
      Node& s = in(1);
      const std::size_t a = w.value.size();
      const std::size_t k = s.value.size();
      const auto half = static_cast<std::ptrdiff_t>(k / 2);
      const auto sa = static_cast<std::ptrdiff_t>(a);
      for (std::size_t kk = 0; kk < k; ++kk) {
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kk) - half;
        const std::ptrdiff_t shift = ((off % sa) + sa) % sa;
        double gs = 0.0;
        const double sk = s.value[kk];
        std::vector<double>* gw = w.requires_grad ? &ensure_grad(w) : nullptr;
        for (std::size_t i = 0; i < a; ++i) {
          const auto src = static_cast<std::size_t>((static_cast<std::ptrdiff_t>(i) - shift + sa) % sa);
          gs += gout[i] * w.value[src];
          if (gw) (*gw)[src] += sk * gout[i];
        }
        if (s.requires_grad) ensure_grad(s)[kk] += gs;
      }
      return;
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Var

const Tensor& Var::value() const { return node_of(*this).value; }

double Var::item() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ContractError("item() on tensor of shape " + shape_string(v.shape()));
  return v[0];
}

bool Var::requires_grad() const { return node_of(*this).requires_grad; }
bool Var::is_leaf() const { return node_of(*this).op == Op::Leaf; }
std::span<const double> Var::grad() const { return node_of(*this).grad; }

void Var::zero_grad() {
  auto& n = *NodeAccess::get(*this);
  std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return NodeAccess::wrap(std::move(n));
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return NodeAccess::wrap(std::move(n));
}

Var constant(double value) { return constant(Tensor::scalar(value)); }

// ---------------------------------------------------------------------------
// Operations

Var matvec(const Var& matrix, const Var& vector) {
  const Tensor& w = matrix.value();
  const Tensor& v = vector.value();
  if (w.rank() != 2 || v.rank() != 1 || w.shape()[1] != v.size()) {
    throw DimensionError("matvec: " + shape_string(w.shape()) + " x " + shape_string(v.shape()));
  }
  const std::size_t m = w.shape()[0];
  const std::size_t k = w.shape()[1];
  Tensor out(Shape{m});
  const double* wd = w.data().data();
  const double* vd = v.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    const double* row = wd + i * k;
    for (std::size_t j = 0; j < k; ++j) s += row[j] * vd[j];
    out[i] = s;
  }
  return make_node(Op::MatVec, std::move(out), {&matrix, &vector});
}

Var outer(const Var& u, const Var& v) {
  const Tensor& a = u.value();
  const Tensor& b = v.value();
  require_vector(a, "outer");
  require_vector(b, "outer");
  Tensor out(Shape{a.size(), b.size()});
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i * b.size() + j] = a[i] * b[j];
  return make_node(Op::Outer, std::move(out), {&u, &v});
}

Var add(const Var& a, const Var& b) {
  return make_node(Op::Add, binary_map(a.value(), b.value(), "add", std::plus<>()), {&a, &b});
}

Var sub(const Var& a, const Var& b) {
  return make_node(Op::Sub, binary_map(a.value(), b.value(), "sub", std::minus<>()), {&a, &b});
}

Var mul(const Var& a, const Var& b) {
  return make_node(Op::Mul, binary_map(a.value(), b.value(), "mul", std::multiplies<>()), {&a, &b});
}

Var div(const Var& a, const Var& b) {
  return make_node(Op::Div, binary_map(a.value(), b.value(), "div", std::divides<>()), {&a, &b});
}

Var pow(const Var& base, const Var& exponent) {
  return make_node(Op::Pow,
                   binary_map(base.value(), exponent.value(), "pow",
                              [](double b, double e) { return std::pow(b, e); }),
                   {&base, &exponent});
}

Var pow(const Var& base, double exponent) { return pow(base, constant(exponent)); }

Var sigmoid(const Var& x) { return make_node(Op::Sigmoid, unary_map(x.value(), sigmoid_scalar), {&x}); }

Var softplus(const Var& x) { return make_node(Op::Softplus, unary_map(x.value(), softplus_scalar), {&x}); }

Var tanh(const Var& x) {
  return make_node(Op::Tanh, unary_map(x.value(), [](double v) { return std::tanh(v); }), {&x});
}

Var exp(const Var& x) {
  return make_node(Op::Exp, unary_map(x.value(), [](double v) { return std::exp(v); }), {&x});
}

Var log(const Var& x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return make_node(Op::Log, unary_map(x.value(), [](double v) { return std::log(v); }), {&x});
}

Var scale(const Var& x, double factor) {
  return make_node(Op::Scale, unary_map(x.value(), [factor](double v) { return v * factor; }), {&x}, factor);
}

Var add_scalar(const Var& x, double offset) {
  return make_node(Op::AddScalar, unary_map(x.value(), [offset](double v) { return v + offset; }), {&x}, offset);
}

Var one_minus(const Var& x) { return add_scalar(scale(x, -1.0), 1.0); }

Var clamp(const Var& x, double lo, double hi) {
  return make_node(Op::Clamp, unary_map(x.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); }), {&x}, lo,
                   hi);
}

Var softmax(const Var& x) {
  const Tensor& v = x.value();
  require_vector(v, "softmax");
  if (v.size() == 0) throw DimensionError("softmax of empty vector");
  const double mx = *std::max_element(v.data().begin(), v.data().end());
  Tensor out(v.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) z += (out[i] = std::exp(v[i] - mx));
  for (std::size_t i = 0; i < v.size(); ++i) out[i] /= z;
  return make_node(Op::Softmax, std::move(out), {&x});
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_node(Op::Sum, Tensor::scalar(s), {&x});
}

Var concat(std::span<const Var> parts) {
  std::vector<double> data;
  for (const Var& p : parts) {
    if (p.value().rank() > 1) throw DimensionError("concat: expected vectors or scalars, got " + shape_string(p.shape()));
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  return make_node_from(Op::Concat, Tensor::vector(std::move(data)), parts);
}

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var slice(const Var& x, std::size_t offset, std::size_t length) {
  const Tensor& v = x.value();
  require_vector(v, "slice");
  if (offset + length > v.size()) {
    throw DimensionError("slice [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                         ") out of range for length " + std::to_string(v.size()));
  }
  std::vector<double> data(v.data().begin() + static_cast<std::ptrdiff_t>(offset),
                           v.data().begin() + static_cast<std::ptrdiff_t>(offset + length));
  return make_node(Op::Slice, Tensor::vector(std::move(data)), {&x}, 0.0, 0.0, offset);
}

Var element(const Var& x, std::size_t index) {
  const Tensor& v = x.value();
  if (index >= v.size()) throw DimensionError("element index out of range");
  return make_node(Op::Slice, Tensor::scalar(v[index]), {&x}, 0.0, 0.0, index);
}

Var circular_conv(const Var& w, const Var& s) {
  const Tensor& wv = w.value();
  const Tensor& sv = s.value();
  require_vector(wv, "circular_conv");
  require_vector(sv, "circular_conv");
  if (sv.size() % 2 == 0) throw DimensionError("circular_conv: kernel length must be odd");
  if (wv.size() == 0) throw DimensionError("circular_conv: empty weighting");
  const auto a = static_cast<std::ptrdiff_t>(wv.size());
  const auto half = static_cast<std::ptrdiff_t>(sv.size() / 2);
  Tensor out(wv.shape());
  for (std::size_t k = 0; k < sv.size(); ++k) {
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - half;
    const std::ptrdiff_t shift = ((off % a) + a) % a;
    const double sk = sv[k];
    for (std::ptrdiff_t i = 0; i < a; ++i) out[static_cast<std::size_t>(i)] += sk * wv[static_cast<std::size_t>((i - shift + a) % a)];
  }
  return make_node(Op::CircularConv, std::move(out), {&w, &s});
}

// ---------------------------------------------------------------------------
// Backward

void backward(const Var& loss) {
  const std::shared_ptr<Node>& root = NodeAccess::get(loss);
  if (root->value.size() != 1) {
    throw ContractError("backward requires a single-element loss, got shape " + shape_string(root->value.shape()));
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  const std::uint64_t epoch = ++g_backward_epoch;
  std::vector<Node*> order;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  root->mark = epoch;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && child->mark != epoch) {
        child->mark = epoch;
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->op != Op::Leaf) n->grad.assign(n->value.size(), 0.0);
  }
  ensure_grad(*root)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) propagate(**it);
}

}  // namespace dwm::ad
