#pragma once

#include <cstdint>
#include <vector>

#include "mmgc/model_config.hpp"
#include "mmgc/nn.hpp"

namespace mmgc {

// Row-major C x H x W image with values in [0, 1].
struct Image {
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<float> pixels;

  bool operator==(const Image&) const = default;
};

template <typename T>
Tensor<T> image_tensor(const Image& img, bool requires_grad = false);

// Patch-based transformer image encoder: patchify, project, add learned
// positions, then `blocks` unmasked transformer layers and a final norm.
template <typename T>
struct VitEncoder {
  std::size_t patch = 4;
  Linear<T> patch_proj;      // C·P² -> d
  Tensor<T> pos_embedding;   // [T x d]
  std::vector<TransformerBlock<T>> blocks;
  LayerNorm<T> ln_final;

  static VitEncoder init(const ModelConfig& cfg, Rng& rng);
  std::size_t dim() const { return patch_proj.out_features(); }

  Tensor<T> patch_embed(const Tensor<T>& image) const;  // [T x d]
  Tensor<T> encode(const Tensor<T>& image) const;       // [T x d]
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

// One Q-Former layer: query self-attention, cross-attention into the patch
// features, feed-forward; each as a pre-norm residual.
template <typename T>
struct QFormerBlock {
  LayerNorm<T> ln_self;
  MultiHeadAttention<T> self_attn;
  LayerNorm<T> ln_cross;
  MultiHeadAttention<T> cross_attn;
  LayerNorm<T> ln_ffn;
  FeedForward<T> ffn;

  static QFormerBlock init(std::size_t dim, std::size_t heads, Rng& rng);
  Tensor<T> forward(const Tensor<T>& queries, const Tensor<T>& patch_feats) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

template <typename T>
struct QFormer {
  Tensor<T> queries;  // [Q x d], learned
  std::vector<QFormerBlock<T>> blocks;
  LayerNorm<T> ln_final;

  static QFormer init(const ModelConfig& cfg, Rng& rng);
  std::size_t num_queries() const { return queries.shape()[0]; }

  Tensor<T> encode(const Tensor<T>& patch_feats) const;  // [Q x d]
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

// v = mean over queries of Q-Former(ViT(image)); shape [d].
template <typename T>
Tensor<T> encode_image(const VitEncoder<T>& enc, const QFormer<T>& qf, const Tensor<T>& image);

}  // namespace mmgc
