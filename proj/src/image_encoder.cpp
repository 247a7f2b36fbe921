#include "mmgc/image_encoder.hpp"

#include <cmath>

namespace mmgc {

template <typename T>
Tensor<T> image_tensor(const Image& img, bool requires_grad) {
  std::vector<T> values(img.pixels.begin(), img.pixels.end());
  return Tensor<T>::from({img.channels, img.height, img.width}, std::move(values), requires_grad);
}

template <typename T>
VitEncoder<T> VitEncoder<T>::init(const ModelConfig& cfg, Rng& rng) {
  VitEncoder enc;
  enc.patch = cfg.patch_size;
  const std::size_t d = cfg.vision_dim;
  enc.patch_proj = Linear<T>::init(cfg.image_channels * cfg.patch_size * cfg.patch_size, d, rng);
  enc.pos_embedding = uniform_param<T>({cfg.num_patches(), d}, std::sqrt(1.0 / static_cast<double>(d)), rng);
  for (std::size_t i = 0; i < cfg.vision_layers; ++i)
    enc.blocks.push_back(TransformerBlock<T>::init(d, cfg.vision_heads, rng));
  enc.ln_final = LayerNorm<T>::init(d);
  return enc;
}

template <typename T>
Tensor<T> VitEncoder<T>::patch_embed(const Tensor<T>& image) const {
  const auto patches = patchify(image, patch);
  if (patches.shape()[0] != pos_embedding.shape()[0])
    throw ShapeMismatch("image yields " + std::to_string(patches.shape()[0]) + " patches, encoder expects " +
                        std::to_string(pos_embedding.shape()[0]));
  return patch_proj.forward(patches) + pos_embedding;
}

template <typename T>
Tensor<T> VitEncoder<T>::encode(const Tensor<T>& image) const {
  auto x = patch_embed(image);
  for (const auto& block : blocks) x = block.forward(x);
  return ln_final.forward(x);
}

template <typename T>
void VitEncoder<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  patch_proj.collect(prefix + ".patch_proj", out);
  out.emplace_back(prefix + ".pos_embedding", pos_embedding);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".blocks." + std::to_string(i), out);
  ln_final.collect(prefix + ".ln_final", out);
}

template <typename T>
QFormerBlock<T> QFormerBlock<T>::init(std::size_t dim, std::size_t heads, Rng& rng) {
  QFormerBlock b;
  b.ln_self = LayerNorm<T>::init(dim);
  b.self_attn = MultiHeadAttention<T>::init(dim, heads, rng);
  b.ln_cross = LayerNorm<T>::init(dim);
  b.cross_attn = MultiHeadAttention<T>::init(dim, heads, rng);
  b.ln_ffn = LayerNorm<T>::init(dim);
  b.ffn = FeedForward<T>::init(dim, rng);
  return b;
}

template <typename T>
Tensor<T> QFormerBlock<T>::forward(const Tensor<T>& queries, const Tensor<T>& patch_feats) const {
  const auto s = ln_self.forward(queries);
  auto x = queries + self_attn.forward(s, s);
  x = x + cross_attn.forward(ln_cross.forward(x), patch_feats);
  return x + ffn.forward(ln_ffn.forward(x));
}

template <typename T>
void QFormerBlock<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  ln_self.collect(prefix + ".ln_self", out);
  self_attn.collect(prefix + ".self_attn", out);
  ln_cross.collect(prefix + ".ln_cross", out);
  cross_attn.collect(prefix + ".cross_attn", out);
  ln_ffn.collect(prefix + ".ln_ffn", out);
  ffn.collect(prefix + ".ffn", out);
}

template <typename T>
QFormer<T> QFormer<T>::init(const ModelConfig& cfg, Rng& rng) {
  QFormer qf;
  const std::size_t d = cfg.vision_dim;
  qf.queries = uniform_param<T>({cfg.num_queries, d}, std::sqrt(1.0 / static_cast<double>(d)), rng);
  for (std::size_t i = 0; i < cfg.qformer_layers; ++i)
    qf.blocks.push_back(QFormerBlock<T>::init(d, cfg.vision_heads, rng));
  qf.ln_final = LayerNorm<T>::init(d);
  return qf;
}

template <typename T>
Tensor<T> QFormer<T>::encode(const Tensor<T>& patch_feats) const {
  if (patch_feats.rank() != 2 || patch_feats.shape()[0] == 0) throw MaskError("Q-Former needs at least one patch token");
  auto x = queries;
  for (const auto& block : blocks) x = block.forward(x, patch_feats);
  return ln_final.forward(x);
}

template <typename T>
void QFormer<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  out.emplace_back(prefix + ".queries", queries);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".blocks." + std::to_string(i), out);
  ln_final.collect(prefix + ".ln_final", out);
}

template <typename T>
Tensor<T> encode_image(const VitEncoder<T>& enc, const QFormer<T>& qf, const Tensor<T>& image) {
  return mean_rows(qf.encode(enc.encode(image)));
}

#define MMGC_INSTANTIATE(T)                                                                 \
  template Tensor<T> image_tensor<T>(const Image&, bool);                                   \
  template struct VitEncoder<T>;                                                            \
  template struct QFormerBlock<T>;                                                          \
  template struct QFormer<T>;                                                               \
  template Tensor<T> encode_image<T>(const VitEncoder<T>&, const QFormer<T>&, const Tensor<T>&);

MMGC_INSTANTIATE(float)
MMGC_INSTANTIATE(double)

#undef MMGC_INSTANTIATE

}  // namespace mmgc
