#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mmgc/image_encoder.hpp"
#include "mmgc/model_config.hpp"
#include "mmgc/nn.hpp"
#include "mmgc/report_encoder.hpp"

namespace mmgc {

template <typename T>
struct JointFeature {
  Tensor<T> g;  // [2·d_p] for m3, [d_p] for m1/m2
};

template <typename T>
struct Prediction {
  Tensor<T> logits;  // [C]
  Tensor<T> probs;   // softmax(logits)

  // Ties resolve to the lower class id.
  int predicted_class() const;
};

// Projectors into the shared space, L2 normalization, concatenation and the
// classifier. Stacks deeper than one layer put GELU between linears.
template <typename T>
struct FusionHead {
  std::vector<Linear<T>> vision_proj;  // d   -> d_p
  std::vector<Linear<T>> text_proj;    // d_t -> d_p
  std::vector<Linear<T>> classifier;   // d_p or 2·d_p -> C
  Variant variant = Variant::kM3;

  static FusionHead init(const ModelConfig& cfg, Rng& rng);

  Tensor<T> project_vision(const Tensor<T>& v) const;
  Tensor<T> project_text(const Tensor<T>& t) const;
  // m3 -> [v ∥ t]; m1 -> v; m2 -> t. VariantMismatch when the supplied
  // modalities disagree with the variant.
  JointFeature<T> fuse(const std::optional<Tensor<T>>& v_norm, const std::optional<Tensor<T>>& t_norm) const;
  Prediction<T> classify(const JointFeature<T>& joint) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

// Cross-entropy of one sample, computed as log-softmax on the logits.
template <typename T>
Tensor<T> cross_entropy(const Prediction<T>& pred, int label);

struct ModelInput {
  const Image* image = nullptr;
  const TokenSequence* tokens = nullptr;
  int label = -1;  // < 0: no loss
};

template <typename T>
struct ForwardResult {
  Prediction<T> prediction;
  Tensor<T> loss;  // undefined when no label was given
  std::optional<Tensor<T>> v_norm;
  std::optional<Tensor<T>> t_norm;
  JointFeature<T> joint;
};

// The whole network: image encoder + Q-Former, report encoder, fusion head.
template <typename T>
struct MmgcNet {
  ModelConfig config;
  VitEncoder<T> vit;
  QFormer<T> qformer;
  ReportEncoder<T> report;
  FusionHead<T> head;

  // Submodules are initialized in a fixed order independent of the variant,
  // so m1/m2/m3 built from one seed share their encoder weights.
  static MmgcNet init(const ModelConfig& cfg, std::uint64_t seed);

  NamedParams<T> parameters() const;
  // Parameters the variant actually uses and that are not frozen.
  NamedParams<T> trainable_parameters() const;

  ForwardResult<T> forward(const ModelInput& input) const;
  // Same pipeline with the image already lifted to a tensor (so gradients
  // can flow into pixels).
  ForwardResult<T> forward(const Tensor<T>* image, const TokenSequence* tokens, int label) const;
};

}  // namespace mmgc
