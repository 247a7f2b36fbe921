#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mmgc/tensor.hpp"

namespace mmgc {

using Rng = std::mt19937_64;

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

// Trainable leaf with entries ~ U(-bound, bound).
template <typename T>
Tensor<T> uniform_param(Shape shape, double bound, Rng& rng);

template <typename T>
void set_trainable(const NamedParams<T>& params, bool trainable);

template <typename T>
struct Linear {
  Tensor<T> weight;  // [out x in]
  Tensor<T> bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  std::size_t in_features() const { return weight.shape()[1]; }
  std::size_t out_features() const { return weight.shape()[0]; }

  // x·Wᵀ + b for x of shape [n x in] or [in].
  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNorm init(std::size_t dim);
  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

template <typename T>
struct Embedding {
  Tensor<T> table;  // [vocab x dim]

  static Embedding init(std::size_t rows, std::size_t dim, Rng& rng);
  Tensor<T> forward(std::span<const int> ids) const { return gather_rows(table, ids); }
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

// Multi-head scaled dot-product attention. Self-attention when queries and
// keys_values are the same tensor; cross-attention otherwise.
template <typename T>
struct MultiHeadAttention {
  Linear<T> query;
  Linear<T> key;
  Linear<T> value;
  Linear<T> output;
  std::size_t heads = 1;

  static MultiHeadAttention init(std::size_t dim, std::size_t heads, Rng& rng);
  std::size_t dim() const { return query.out_features(); }

  // mask may be null. `weights_out`, when given, receives each head's
  // [queries x keys] attention matrix.
  Tensor<T> forward(const Tensor<T>& queries, const Tensor<T>& keys_values, const AttentionMask* mask = nullptr,
                    std::vector<Tensor<T>>* weights_out = nullptr) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

template <typename T>
struct FeedForward {
  Linear<T> up;    // d -> 4d
  Linear<T> down;  // 4d -> d

  static constexpr std::size_t kExpansion = 4;
  static FeedForward init(std::size_t dim, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const { return down.forward(gelu(up.forward(x))); }
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

// Pre-norm residual block: x + Attn(LN(x)), then + FFN(LN(.)).
template <typename T>
struct TransformerBlock {
  LayerNorm<T> ln_attn;
  MultiHeadAttention<T> attn;
  LayerNorm<T> ln_ffn;
  FeedForward<T> ffn;

  static TransformerBlock init(std::size_t dim, std::size_t heads, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, const AttentionMask* mask = nullptr) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

}  // namespace mmgc
