#include "mmgc/nn.hpp"

#include <cmath>

namespace mmgc {

template <typename T>
Tensor<T> uniform_param(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>::from(std::move(shape), std::move(values), true);
}

template <typename T>
void set_trainable(const NamedParams<T>& params, bool trainable) {
  for (const auto& [name, p] : params) {
    auto copy = p;
    copy.set_requires_grad(trainable);
  }
}

template <typename T>
Linear<T> Linear<T>::init(std::size_t in, std::size_t out, Rng& rng) {
  Linear layer;
  layer.weight = uniform_param<T>({out, in}, std::sqrt(1.0 / static_cast<double>(in)), rng);
  layer.bias = Tensor<T>::zeros({out}, true);
  return layer;
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) const {
  if (x.rank() == 1) {
    if (x.numel() != in_features())
      throw ShapeMismatch("linear expects " + std::to_string(in_features()) + " inputs, got " + shape_str(x.shape()));
    return reshape(add_row(matmul_nt(reshape(x, {1, x.numel()}), weight), bias), {out_features()});
  }
  if (x.rank() != 2 || x.shape()[1] != in_features())
    throw ShapeMismatch("linear expects [n x " + std::to_string(in_features()) + "], got " + shape_str(x.shape()));
  return add_row(matmul_nt(x, weight), bias);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

template <typename T>
LayerNorm<T> LayerNorm<T>::init(std::size_t dim) {
  return {Tensor<T>::from({dim}, std::vector<T>(dim, T(1)), true), Tensor<T>::zeros({dim}, true)};
}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

template <typename T>
Embedding<T> Embedding<T>::init(std::size_t rows, std::size_t dim, Rng& rng) {
  return {uniform_param<T>({rows, dim}, std::sqrt(1.0 / static_cast<double>(dim)), rng)};
}

template <typename T>
void Embedding<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  out.emplace_back(prefix, table);
}

template <typename T>
MultiHeadAttention<T> MultiHeadAttention<T>::init(std::size_t dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || dim % heads != 0)
    throw InvalidParams("model dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
  MultiHeadAttention mha;
  mha.query = Linear<T>::init(dim, dim, rng);
  mha.key = Linear<T>::init(dim, dim, rng);
  mha.value = Linear<T>::init(dim, dim, rng);
  mha.output = Linear<T>::init(dim, dim, rng);
  mha.heads = heads;
  return mha;
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::forward(const Tensor<T>& queries, const Tensor<T>& keys_values,
                                         const AttentionMask* mask, std::vector<Tensor<T>>* weights_out) const {
  if (keys_values.rank() != 2 || keys_values.shape()[0] == 0) throw MaskError("attention over zero keys");
  const std::size_t d = dim();
  const std::size_t head_dim = d / heads;
  const T score_scale = T(1) / std::sqrt(static_cast<T>(head_dim));

  const Tensor<T> q = query.forward(queries);
  const Tensor<T> k = key.forward(keys_values);
  const Tensor<T> v = value.forward(keys_values);

  std::vector<Tensor<T>> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t lo = h * head_dim, hi = lo + head_dim;
    const auto qh = heads == 1 ? q : slice_cols(q, lo, hi);
    const auto kh = heads == 1 ? k : slice_cols(k, lo, hi);
    const auto vh = heads == 1 ? v : slice_cols(v, lo, hi);
    const auto scores = scale(matmul_nt(qh, kh), score_scale);
    const auto weights = mask ? masked_softmax(scores, *mask) : softmax(scores, 1);
    if (weights_out) weights_out->push_back(weights);
    head_outputs.push_back(matmul(weights, vh));
  }
  const auto merged = heads == 1 ? head_outputs.front() : concat_cols(head_outputs);
  return output.forward(merged);
}

template <typename T>
void MultiHeadAttention<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
}

template <typename T>
FeedForward<T> FeedForward<T>::init(std::size_t dim, Rng& rng) {
  FeedForward ffn;
  ffn.up = Linear<T>::init(dim, kExpansion * dim, rng);
  ffn.down = Linear<T>::init(kExpansion * dim, dim, rng);
  return ffn;
}

template <typename T>
void FeedForward<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  up.collect(prefix + ".up", out);
  down.collect(prefix + ".down", out);
}

template <typename T>
TransformerBlock<T> TransformerBlock<T>::init(std::size_t dim, std::size_t heads, Rng& rng) {
  TransformerBlock block;
  block.ln_attn = LayerNorm<T>::init(dim);
  block.attn = MultiHeadAttention<T>::init(dim, heads, rng);
  block.ln_ffn = LayerNorm<T>::init(dim);
  block.ffn = FeedForward<T>::init(dim, rng);
  return block;
}

template <typename T>
Tensor<T> TransformerBlock<T>::forward(const Tensor<T>& x, const AttentionMask* mask) const {
  const auto normed = ln_attn.forward(x);
  const auto h = x + attn.forward(normed, normed, mask);
  return h + ffn.forward(ln_ffn.forward(h));
}

template <typename T>
void TransformerBlock<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  ln_attn.collect(prefix + ".ln_attn", out);
  attn.collect(prefix + ".attn", out);
  ln_ffn.collect(prefix + ".ln_ffn", out);
  ffn.collect(prefix + ".ffn", out);
}

#define MMGC_INSTANTIATE(T)                                          \
  template Tensor<T> uniform_param<T>(Shape, double, Rng&);          \
  template void set_trainable<T>(const NamedParams<T>&, bool);       \
  template struct Linear<T>;                                         \
  template struct LayerNorm<T>;                                      \
  template struct Embedding<T>;                                      \
  template struct MultiHeadAttention<T>;                             \
  template struct FeedForward<T>;                                    \
  template struct TransformerBlock<T>;

MMGC_INSTANTIATE(float)
MMGC_INSTANTIATE(double)

#undef MMGC_INSTANTIATE

}  // namespace mmgc
