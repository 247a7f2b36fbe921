#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mmgc/errors.hpp"

namespace mmgc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// One recorded value in the compute graph. Leaves have no backward function;
// interior nodes push their accumulated grad into `inputs` when visited.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Shared handle to a graph node. Copies alias the same storage, like a
// framework tensor; values are treated as immutable once produced, except
// for leaf parameters updated in place by the optimizer.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  // Rank-1 tensors are viewed as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  T item() const;
  T at(std::size_t i) const { return node_->value.at(i); }
  T at(std::size_t r, std::size_t c) const { return node_->value.at(r * cols() + c); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  // Zero-filled span when nothing has been accumulated yet.
  std::span<const T> grad() const;
  void zero_grad() { node_->grad.clear(); }

  // Reverse-mode pass from a scalar. Leaf grads accumulate across calls.
  void backward() const;

  Tensor detach() const;
  const char* op() const { return node_->op; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// While alive, ops on this thread record no graph (inference only).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Boolean attention mask over a [queries x keys] score matrix; true = attend.
struct AttentionMask {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<char> allowed;

  static AttentionMask key_padding(std::size_t queries, const std::vector<bool>& key_allowed);
  static AttentionMask causal(std::size_t n);
  bool at(std::size_t q, std::size_t k) const { return allowed[q * keys + k] != 0; }
};

// ---- differentiable ops -------------------------------------------------

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a · bᵀ without materializing the transpose in the graph.
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& x);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
// x[n×m] + bias[m] broadcast over rows.
template <typename T> Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
// [n×d] -> [d]
template <typename T> Tensor<T> mean_rows(const Tensor<T>& x);

// axis < 0 means last axis. Rank 1 or 2.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis = -1);
// Row softmax over a [q×k] matrix with masked entries forced to weight 0.
template <typename T> Tensor<T> masked_softmax(const Tensor<T>& x, const AttentionMask& mask);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& x);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts);  // rank-1
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> ids);
// [C×H×W] -> [(H/P)(W/P) × C·P·P], patches in raster order, each flattened (c, dy, dx).
template <typename T> Tensor<T> patchify(const Tensor<T>& image, std::size_t patch);

// Scalar loss −log softmax(logits)[label].
template <typename T> Tensor<T> cross_entropy_logits(const Tensor<T>& logits, int label);

// Identity forward with a negated backward. Only used to sabotage a
// component when exercising the gradient checker itself.
template <typename T> Tensor<T> negate_grad(const Tensor<T>& x);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

}  // namespace mmgc
