#include "mmgc/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace mmgc {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

AttentionMask AttentionMask::key_padding(std::size_t queries, const std::vector<bool>& key_allowed) {
  AttentionMask m;
  m.queries = queries;
  m.keys = key_allowed.size();
  m.allowed.resize(queries * m.keys);
  for (std::size_t q = 0; q < queries; ++q)
    for (std::size_t k = 0; k < m.keys; ++k) m.allowed[q * m.keys + k] = key_allowed[k] ? 1 : 0;
  return m;
}

AttentionMask AttentionMask::causal(std::size_t n) {
  AttentionMask m;
  m.queries = n;
  m.keys = n;
  m.allowed.resize(n * n);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t k = 0; k < n; ++k) m.allowed[q * n + k] = k <= q ? 1 : 0;
  return m;
}

namespace {
thread_local bool t_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
MatMap<T> as_mat(std::vector<T>& v, std::size_t r, std::size_t c) {
  return MatMap<T>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
template <typename T>
ConstMatMap<T> as_mat(const std::vector<T>& v, std::size_t r, std::size_t c) {
  return ConstMatMap<T>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename T>
void check_finite(const std::vector<T>& values, const char* op) {
  // A value is NaN/inf iff its exponent bits are all set.
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits kExp = sizeof(T) == 4 ? Bits(0x7f800000u) : Bits(0x7ff0000000000000ull);
  Bits missing = kExp;  // exponent bits still clear, minimised over all values
  for (const T v : values) missing = std::min<Bits>(missing, ~std::bit_cast<Bits>(v) & kExp);
  if (missing == 0) throw NumericError(std::string("non-finite value produced by ") + op);
}

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<NodePtr<T>> inputs, std::function<void(Node<T>&)> backward) {
  check_finite(value, op);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool needs_grad = t_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const NodePtr<T>& n) {
                             return n->requires_grad;
                           });
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void require_rank2(const Tensor<T>& x, const char* op) {
  if (x.rank() != 2) throw ShapeMismatch(std::string(op) + " expects a matrix, got " + shape_str(x.shape()));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
std::vector<T>* grad_of(Node<T>& self, std::size_t i) {
  auto& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

}  // namespace

// ---- Tensor -------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw ShapeMismatch("shape " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
                        " values");
  check_finite(values, "leaf");
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  if (rank() == 2) return shape()[0];
  if (rank() <= 1) return 1;
  throw ShapeMismatch("rows() on tensor of shape " + shape_str(shape()));
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  if (rank() == 2) return shape()[1];
  if (rank() == 1) return shape()[0];
  if (rank() == 0) return 1;
  throw ShapeMismatch("cols() on tensor of shape " + shape_str(shape()));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeMismatch("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) node_->grad.assign(node_->value.size(), T(0));
  return node_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor<T>::from(shape(), node_->value, false);
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) throw GraphError("backward() needs a scalar loss, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order)
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  node_->grad_buffer()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->is_leaf()) continue;
    n->backward(*n);
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

// ---- linear algebra -----------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeMismatch("matmul inner dims: " + shape_str(a.shape()) + " · " + shape_str(b.shape()));
  std::vector<T> out(m * n);
  as_mat(out, m, n).noalias() = as_mat(a.node()->value, m, k) * as_mat(b.node()->value, k, n);
  return make_result<T>("matmul", {m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node<T>& self) {
    const auto dc = as_mat(std::as_const(self.grad), m, n);
    if (auto* ga = grad_of(self, 0))
      as_mat(*ga, m, k).noalias() += dc * as_mat(std::as_const(self.inputs[1]->value), k, n).transpose();
    if (auto* gb = grad_of(self, 1))
      as_mat(*gb, k, n).noalias() += as_mat(std::as_const(self.inputs[0]->value), m, k).transpose() * dc;
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k)
    throw ShapeMismatch("matmul_nt inner dims: " + shape_str(a.shape()) + " · " + shape_str(b.shape()) + "ᵀ");
  std::vector<T> out(m * n);
  as_mat(out, m, n).noalias() = as_mat(a.node()->value, m, k) * as_mat(b.node()->value, n, k).transpose();
  return make_result<T>("matmul_nt", {m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node<T>& self) {
    const auto dc = as_mat(std::as_const(self.grad), m, n);
    if (auto* ga = grad_of(self, 0))
      as_mat(*ga, m, k).noalias() += dc * as_mat(std::as_const(self.inputs[1]->value), n, k);
    if (auto* gb = grad_of(self, 1))
      as_mat(*gb, n, k).noalias() += dc.transpose() * as_mat(std::as_const(self.inputs[0]->value), m, k);
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_rank2(x, "transpose");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  std::vector<T> out(r * c);
  as_mat(out, c, r) = as_mat(x.node()->value, r, c).transpose();
  return make_result<T>("transpose", {c, r}, std::move(out), {x.node()}, [r, c](Node<T>& self) {
    if (auto* g = grad_of(self, 0)) as_mat(*g, r, c) += as_mat(std::as_const(self.grad), c, r).transpose();
  });
}

// ---- elementwise --------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result<T>("add", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (std::size_t j = 0; j < 2; ++j)
      if (auto* g = grad_of(self, j))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.numel());
  const auto& xv = x.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return make_result<T>("scale", x.shape(), std::move(out), {x.node()}, [factor](Node<T>& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() > 2 || bias.rank() != 1 || bias.numel() != x.cols())
    throw ShapeMismatch("add_row: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<T> out(x.node()->value);
  const auto& bv = bias.node()->value;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  return make_result<T>("add_row", x.shape(), std::move(out), {x.node(), bias.node()}, [r, c](Node<T>& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*g)[j] += self.grad[i * c + j];
  });
}

// ---- reductions ---------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (const T v : x.node()->value) total += v;
  return make_result<T>("sum", {}, {total}, {x.node()}, [](Node<T>& self) {
    if (auto* g = grad_of(self, 0))
      for (auto& gi : *g) gi += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const T inv = T(1) / static_cast<T>(x.numel());
  T total = 0;
  for (const T v : x.node()->value) total += v;
  return make_result<T>("mean", {}, {total * inv}, {x.node()}, [inv](Node<T>& self) {
    if (auto* g = grad_of(self, 0))
      for (auto& gi : *g) gi += self.grad[0] * inv;
  });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  require_rank2(x, "mean_rows");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (r == 0) throw ShapeMismatch("mean_rows over zero rows");
  const T inv = T(1) / static_cast<T>(r);
  std::vector<T> out(c, T(0));
  const auto& xv = x.node()->value;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += xv[i * c + j];
  for (auto& v : out) v *= inv;
  return make_result<T>("mean_rows", {c}, std::move(out), {x.node()}, [r, c, inv](Node<T>& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += self.grad[j] * inv;
  });
}

// ---- softmax family -----------------------------------------------------

namespace {

// Visits each softmax "lane": `count` entries starting at `offset`, spaced `stride`.
template <typename F>
void for_each_lane(const Shape& shape, int axis, F&& f) {
  if (shape.size() == 1 || shape.empty()) {
    f(std::size_t{0}, std::size_t{1}, shape_numel(shape));
    return;
  }
  const std::size_t r = shape[0], c = shape[1];
  if (axis == 1) {
    for (std::size_t i = 0; i < r; ++i) f(i * c, std::size_t{1}, c);
  } else {
    for (std::size_t j = 0; j < c; ++j) f(j, c, r);
  }
}

template <typename T>
void softmax_backward_lanes(Node<T>& self, int axis) {
  auto* g = grad_of(self, 0);
  if (!g) return;
  const auto& y = self.value;
  for_each_lane(self.shape, axis, [&](std::size_t off, std::size_t stride, std::size_t count) {
    T dot = 0;
    for (std::size_t t = 0; t < count; ++t) dot += self.grad[off + t * stride] * y[off + t * stride];
    for (std::size_t t = 0; t < count; ++t) {
      const std::size_t i = off + t * stride;
      (*g)[i] += y[i] * (self.grad[i] - dot);
    }
  });
}

template <typename T>
int normalize_axis(const Tensor<T>& x, int axis, const char* op) {
  if (x.rank() > 2) throw ShapeMismatch(std::string(op) + " supports rank <= 2");
  const int rank = static_cast<int>(std::max<std::size_t>(x.rank(), 1));
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeMismatch(std::string(op) + ": invalid axis");
  return x.rank() <= 1 ? 0 : axis;
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  axis = normalize_axis(x, axis, "softmax");
  check_finite(x.node()->value, "softmax input");
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for_each_lane(x.shape(), axis, [&](std::size_t off, std::size_t stride, std::size_t count) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t t = 0; t < count; ++t) mx = std::max(mx, xv[off + t * stride]);
    T denom = 0;
    for (std::size_t t = 0; t < count; ++t) {
      const std::size_t i = off + t * stride;
      out[i] = std::exp(xv[i] - mx);
      denom += out[i];
    }
    for (std::size_t t = 0; t < count; ++t) out[off + t * stride] /= denom;
  });
  return make_result<T>("softmax", x.shape(), std::move(out), {x.node()},
                        [axis](Node<T>& self) { softmax_backward_lanes(self, axis); });
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, const AttentionMask& mask) {
  require_rank2(x, "masked_softmax");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (mask.queries != r || mask.keys != c)
    throw ShapeMismatch("mask " + std::to_string(mask.queries) + "x" + std::to_string(mask.keys) +
                        " does not match scores " + shape_str(x.shape()));
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size(), T(0));
  for (std::size_t i = 0; i < r; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (mask.at(i, j)) mx = std::max(mx, xv[i * c + j]);
    if (mx == -std::numeric_limits<T>::infinity()) throw MaskError("every key is masked for query " + std::to_string(i));
    T denom = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask.at(i, j)) continue;
      out[i * c + j] = std::exp(xv[i * c + j] - mx);
      denom += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= denom;
  }
  // Masked entries have y = 0, so the generic softmax backward leaves them untouched.
  return make_result<T>("masked_softmax", x.shape(), std::move(out), {x.node()},
                        [](Node<T>& self) { softmax_backward_lanes(self, 1); });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  const int axis = normalize_axis(x, -1, "log_softmax");
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for_each_lane(x.shape(), axis, [&](std::size_t off, std::size_t stride, std::size_t count) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t t = 0; t < count; ++t) mx = std::max(mx, xv[off + t * stride]);
    T denom = 0;
    for (std::size_t t = 0; t < count; ++t) denom += std::exp(xv[off + t * stride] - mx);
    const T lse = mx + std::log(denom);
    for (std::size_t t = 0; t < count; ++t) out[off + t * stride] = xv[off + t * stride] - lse;
  });
  return make_result<T>("log_softmax", x.shape(), std::move(out), {x.node()}, [axis](Node<T>& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for_each_lane(self.shape, axis, [&](std::size_t off, std::size_t stride, std::size_t count) {
      T total = 0;
      for (std::size_t t = 0; t < count; ++t) total += self.grad[off + t * stride];
      for (std::size_t t = 0; t < count; ++t) {
        const std::size_t i = off + t * stride;
        (*g)[i] += self.grad[i] - std::exp(self.value[i]) * total;
      }
    });
  });
}

template <typename T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, int label) {
  if (logits.rank() > 2 || logits.rows() != 1)
    throw ShapeMismatch("cross_entropy expects one row of logits, got " + shape_str(logits.shape()));
  const std::size_t c = logits.cols();
  if (label < 0 || static_cast<std::size_t>(label) >= c)
    throw IndexError("label " + std::to_string(label) + " outside [0, " + std::to_string(c) + ")");
  const auto& xv = logits.node()->value;
  const T mx = *std::max_element(xv.begin(), xv.end());
  T denom = 0;
  for (const T v : xv) denom += std::exp(v - mx);
  const T lse = mx + std::log(denom);
  const auto lbl = static_cast<std::size_t>(label);
  return make_result<T>("cross_entropy", {}, {lse - xv[lbl]}, {logits.node()}, [lse, lbl](Node<T>& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    const auto& xv = self.inputs[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i)
      (*g)[i] += self.grad[0] * (std::exp(xv[i] - lse) - (i == lbl ? T(1) : T(0)));
  });
}

// ---- normalization / activations ---------------------------------------

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() < 1 || x.rank() > 2) throw ShapeMismatch("layer_norm supports rank 1 or 2");
  const std::size_t r = x.rows(), c = x.cols();
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeMismatch("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                        " vs last axis " + std::to_string(c));
  if (!(eps > T(0))) throw InvalidParams("layer_norm eps must be positive");
  const auto& xv = x.node()->value;
  const auto& gv = gamma.node()->value;
  const auto& bv = beta.node()->value;
  std::vector<T> out(xv.size());
  std::vector<T> xhat(xv.size());
  std::vector<T> rstd(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = &xv[i * c];
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(c);
    rstd[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * rstd[i];
      out[i * c + j] = gv[j] * xhat[i * c + j] + bv[j];
    }
  }
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [r, c, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const auto& gv = self.inputs[1]->value;
        auto* gx = grad_of(self, 0);
        auto* gg = grad_of(self, 1);
        auto* gb = grad_of(self, 2);
        std::vector<T> dxhat(c);
        for (std::size_t i = 0; i < r; ++i) {
          const T* dy = &self.grad[i * c];
          const T* xh = &xhat[i * c];
          if (gg)
            for (std::size_t j = 0; j < c; ++j) (*gg)[j] += dy[j] * xh[j];
          if (gb)
            for (std::size_t j = 0; j < c; ++j) (*gb)[j] += dy[j];
          if (!gx) continue;
          T mean_d = 0, mean_dx = 0;
          for (std::size_t j = 0; j < c; ++j) {
            dxhat[j] = dy[j] * gv[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
          }
          mean_d /= static_cast<T>(c);
          mean_dx /= static_cast<T>(c);
          for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += rstd[i] * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
  return make_result<T>("gelu", x.shape(), std::move(out), {x.node()}, [inv_sqrt2](Node<T>& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    const auto& xv = self.inputs[0]->value;
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const T cdf = T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * xv[i] * xv[i]);
      (*g)[i] += self.grad[i] * (cdf + xv[i] * pdf);
    }
  });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x) {
  const auto& xv = x.node()->value;
  T sq = 0;
  for (const T v : xv) sq += v * v;
  const T norm = std::sqrt(sq);
  if (!(norm >= T(1e-12))) throw DegenerateVector("L2 norm below 1e-12; projector output collapsed");
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] / norm;
  return make_result<T>("l2_normalize", x.shape(), std::move(out), {x.node()}, [norm](Node<T>& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    const auto& y = self.value;
    T dot = 0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * self.grad[i];
    for (std::size_t i = 0; i < y.size(); ++i) (*g)[i] += (self.grad[i] - y[i] * dot) / norm;
  });
}

// ---- layout -------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeMismatch("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return make_result<T>("reshape", std::move(shape), x.node()->value, {x.node()}, [](Node<T>& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat of nothing");
  std::vector<T> out;
  std::vector<NodePtr<T>> inputs;
  for (const auto& p : parts) {
    if (p.rank() != 1) throw ShapeMismatch("concat expects rank-1 parts, got " + shape_str(p.shape()));
    out.insert(out.end(), p.node()->value.begin(), p.node()->value.end());
    inputs.push_back(p.node());
  }
  const std::size_t n = out.size();
  return make_result<T>("concat", {n}, std::move(out), std::move(inputs), [](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t j = 0; j < self.inputs.size(); ++j) {
      const std::size_t len = self.inputs[j]->value.size();
      if (auto* g = grad_of(self, j))
        for (std::size_t i = 0; i < len; ++i) (*g)[i] += self.grad[off + i];
      off += len;
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols of nothing");
  const std::size_t r = parts.front().rows();
  std::vector<std::size_t> widths;
  std::vector<NodePtr<T>> inputs;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.shape()[0] != r) throw ShapeMismatch("concat_cols row count mismatch");
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
    inputs.push_back(p.node());
  }
  std::vector<T> out(r * total);
  std::size_t off = 0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    const auto& pv = parts[j].node()->value;
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(&pv[i * widths[j]], widths[j], &out[i * total + off]);
    off += widths[j];
  }
  return make_result<T>("concat_cols", {r, total}, std::move(out), std::move(inputs),
                        [r, total, widths = std::move(widths)](Node<T>& self) {
                          std::size_t off = 0;
                          for (std::size_t j = 0; j < widths.size(); ++j) {
                            if (auto* g = grad_of(self, j))
                              for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t k = 0; k < widths[j]; ++k)
                                  (*g)[i * widths[j] + k] += self.grad[i * total + off + k];
                            off += widths[j];
                          }
                        });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (begin >= end || end > c) throw ShapeMismatch("slice_cols range out of bounds");
  const std::size_t w = end - begin;
  std::vector<T> out(r * w);
  const auto& xv = x.node()->value;
  for (std::size_t i = 0; i < r; ++i) std::copy_n(&xv[i * c + begin], w, &out[i * w]);
  return make_result<T>("slice_cols", {r, w}, std::move(out), {x.node()}, [r, c, w, begin](Node<T>& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t k = 0; k < w; ++k) (*g)[i * c + begin + k] += self.grad[i * w + k];
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> ids) {
  require_rank2(table, "gather_rows");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (const int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw IndexError("id " + std::to_string(id) + " outside table of " + std::to_string(v) + " rows");
    rows.push_back(static_cast<std::size_t>(id));
  }
  std::vector<T> out(rows.size() * d);
  const auto& tv = table.node()->value;
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(&tv[rows[i] * d], d, &out[i * d]);
  const std::size_t n = rows.size();
  return make_result<T>("gather_rows", {n, d}, std::move(out), {table.node()},
                        [d, rows = std::move(rows)](Node<T>& self) {
                          if (auto* g = grad_of(self, 0))
                            for (std::size_t i = 0; i < rows.size(); ++i)
                              for (std::size_t k = 0; k < d; ++k) (*g)[rows[i] * d + k] += self.grad[i * d + k];
                        });
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch) {
  if (image.rank() != 3) throw ShapeMismatch("patchify expects [C x H x W], got " + shape_str(image.shape()));
  const std::size_t ch = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  if (patch == 0 || h % patch != 0 || w % patch != 0)
    throw ShapeMismatch("image " + shape_str(image.shape()) + " not divisible by patch " + std::to_string(patch));
  const std::size_t ph = h / patch, pw = w / patch, tokens = ph * pw, width = ch * patch * patch;
  // src[t * width + f] = flat pixel index feeding token t, feature f
  std::vector<std::size_t> src(tokens * width);
  for (std::size_t py = 0; py < ph; ++py)
    for (std::size_t px = 0; px < pw; ++px)
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t dy = 0; dy < patch; ++dy)
          for (std::size_t dx = 0; dx < patch; ++dx) {
            const std::size_t t = py * pw + px;
            const std::size_t f = (c * patch + dy) * patch + dx;
            src[t * width + f] = (c * h + py * patch + dy) * w + px * patch + dx;
          }
  std::vector<T> out(src.size());
  const auto& iv = image.node()->value;
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = iv[src[i]];
  return make_result<T>("patchify", {tokens, width}, std::move(out), {image.node()},
                        [src = std::move(src)](Node<T>& self) {
                          if (auto* g = grad_of(self, 0))
                            for (std::size_t i = 0; i < src.size(); ++i) (*g)[src[i]] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> negate_grad(const Tensor<T>& x) {
  return make_result<T>("negate_grad", x.shape(), x.node()->value, {x.node()}, [](Node<T>& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

#define MMGC_INSTANTIATE(T)                                                                      \
  template struct Node<T>;                                                                       \
  template class Tensor<T>;                                                                      \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> transpose(const Tensor<T>&);                                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> mean_rows(const Tensor<T>&);                                                \
  template Tensor<T> softmax(const Tensor<T>&, int);                                             \
  template Tensor<T> masked_softmax(const Tensor<T>&, const AttentionMask&);                     \
  template Tensor<T> log_softmax(const Tensor<T>&);                                              \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
  template Tensor<T> gelu(const Tensor<T>&);                                                     \
  template Tensor<T> l2_normalize(const Tensor<T>&);                                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> concat(const std::vector<Tensor<T>>&);                                      \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                 \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                     \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const int>);                        \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);                                    \
  template Tensor<T> cross_entropy_logits(const Tensor<T>&, int);                                \
  template Tensor<T> negate_grad(const Tensor<T>&);

MMGC_INSTANTIATE(float)
MMGC_INSTANTIATE(double)

#undef MMGC_INSTANTIATE

}  // namespace mmgc
