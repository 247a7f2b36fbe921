#include "mmgc/fusion.hpp"

namespace mmgc {

template <typename T>
int Prediction<T>::predicted_class() const {
  int best = 0;
  for (std::size_t c = 1; c < logits.numel(); ++c)
    if (logits.at(c) > logits.at(static_cast<std::size_t>(best))) best = static_cast<int>(c);
  return best;
}

namespace {

template <typename T>
std::vector<Linear<T>> make_stack(std::size_t in, std::size_t hidden, std::size_t out, std::size_t depth, Rng& rng) {
  std::vector<Linear<T>> stack;
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t fan_in = i == 0 ? in : hidden;
    const std::size_t fan_out = i + 1 == depth ? out : hidden;
    stack.push_back(Linear<T>::init(fan_in, fan_out, rng));
  }
  return stack;
}

template <typename T>
Tensor<T> run_stack(const std::vector<Linear<T>>& stack, Tensor<T> x) {
  for (std::size_t i = 0; i < stack.size(); ++i) {
    if (i > 0) x = gelu(x);
    x = stack[i].forward(x);
  }
  return x;
}

template <typename T>
void collect_stack(const std::vector<Linear<T>>& stack, const std::string& prefix, NamedParams<T>& out) {
  for (std::size_t i = 0; i < stack.size(); ++i) stack[i].collect(prefix + "." + std::to_string(i), out);
}

}  // namespace

template <typename T>
FusionHead<T> FusionHead<T>::init(const ModelConfig& cfg, Rng& rng) {
  FusionHead head;
  head.variant = cfg.variant;
  const std::size_t dp = cfg.proj_dim;
  head.vision_proj = make_stack<T>(cfg.vision_dim, dp, dp, cfg.proj_layers, rng);
  head.text_proj = make_stack<T>(cfg.text_dim, dp, dp, cfg.proj_layers, rng);
  const std::size_t joint = cfg.variant == Variant::kM3 ? 2 * dp : dp;
  head.classifier = make_stack<T>(joint, dp, cfg.num_classes, cfg.classifier_layers, rng);
  return head;
}

template <typename T>
Tensor<T> FusionHead<T>::project_vision(const Tensor<T>& v) const {
  return run_stack(vision_proj, v);
}

template <typename T>
Tensor<T> FusionHead<T>::project_text(const Tensor<T>& t) const {
  return run_stack(text_proj, t);
}

template <typename T>
JointFeature<T> FusionHead<T>::fuse(const std::optional<Tensor<T>>& v_norm,
                                    const std::optional<Tensor<T>>& t_norm) const {
  switch (variant) {
    case Variant::kM1:
      if (!v_norm || t_norm) throw VariantMismatch("m1 fuses the image feature only");
      return {*v_norm};
    case Variant::kM2:
      if (v_norm || !t_norm) throw VariantMismatch("m2 fuses the report feature only");
      return {*t_norm};
    case Variant::kM3:
      if (!v_norm || !t_norm) throw VariantMismatch("m3 needs both image and report features");
      return {concat<T>({*v_norm, *t_norm})};
  }
  throw VariantMismatch("unknown variant");
}

template <typename T>
Prediction<T> FusionHead<T>::classify(const JointFeature<T>& joint) const {
  if (joint.g.numel() != classifier.front().in_features())
    throw ShapeMismatch("joint feature " + shape_str(joint.g.shape()) + " vs classifier input " +
                        std::to_string(classifier.front().in_features()));
  auto logits = run_stack(classifier, joint.g);
  auto probs = softmax(logits);
  return {std::move(logits), std::move(probs)};
}

template <typename T>
void FusionHead<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  collect_stack(vision_proj, prefix + ".vision_proj", out);
  collect_stack(text_proj, prefix + ".text_proj", out);
  collect_stack(classifier, prefix + ".classifier", out);
}

template <typename T>
Tensor<T> cross_entropy(const Prediction<T>& pred, int label) {
  return cross_entropy_logits(pred.logits, label);
}

template <typename T>
MmgcNet<T> MmgcNet<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  MmgcNet net;
  net.config = cfg;
  net.vit = VitEncoder<T>::init(cfg, rng);
  net.qformer = QFormer<T>::init(cfg, rng);
  net.report = ReportEncoder<T>::init(cfg, rng);
  net.head = FusionHead<T>::init(cfg, rng);

  NamedParams<T> image_params, text_params;
  net.vit.collect("vit", image_params);
  net.qformer.collect("qformer", image_params);
  net.report.collect("report", text_params);
  if (cfg.freeze_image) set_trainable(image_params, false);
  if (cfg.freeze_text) set_trainable(text_params, false);
  return net;
}

template <typename T>
NamedParams<T> MmgcNet<T>::parameters() const {
  NamedParams<T> out;
  vit.collect("vit", out);
  qformer.collect("qformer", out);
  report.collect("report", out);
  head.collect("head", out);
  return out;
}

template <typename T>
NamedParams<T> MmgcNet<T>::trainable_parameters() const {
  NamedParams<T> out;
  if (uses_image(config.variant) && !config.freeze_image) {
    vit.collect("vit", out);
    qformer.collect("qformer", out);
  }
  if (uses_text(config.variant) && !config.freeze_text) report.collect("report", out);
  if (uses_image(config.variant)) collect_stack(head.vision_proj, "head.vision_proj", out);
  if (uses_text(config.variant)) collect_stack(head.text_proj, "head.text_proj", out);
  collect_stack(head.classifier, "head.classifier", out);
  return out;
}

template <typename T>
ForwardResult<T> MmgcNet<T>::forward(const ModelInput& input) const {
  if (uses_image(config.variant)) {
    if (!input.image) throw VariantMismatch(variant_name(config.variant) + " needs an image");
    const auto img = image_tensor<T>(*input.image);
    return forward(&img, input.tokens, input.label);
  }
  return forward(nullptr, input.tokens, input.label);
}

template <typename T>
ForwardResult<T> MmgcNet<T>::forward(const Tensor<T>* image, const TokenSequence* tokens, int label) const {
  ForwardResult<T> result;
  if (uses_image(config.variant)) {
    if (!image) throw VariantMismatch(variant_name(config.variant) + " needs an image");
    result.v_norm = l2_normalize(head.project_vision(encode_image(vit, qformer, *image)));
  }
  if (uses_text(config.variant)) {
    if (!tokens) throw VariantMismatch(variant_name(config.variant) + " needs a report");
    result.t_norm = l2_normalize(head.project_text(report.encode(*tokens)));
  }
  result.joint = head.fuse(result.v_norm, result.t_norm);
  result.prediction = head.classify(result.joint);
  if (label >= 0) result.loss = cross_entropy(result.prediction, label);
  return result;
}

#define MMGC_INSTANTIATE(T)                                              \
  template struct Prediction<T>;                                         \
  template struct FusionHead<T>;                                         \
  template Tensor<T> cross_entropy<T>(const Prediction<T>&, int);        \
  template struct MmgcNet<T>;

MMGC_INSTANTIATE(float)
MMGC_INSTANTIATE(double)

#undef MMGC_INSTANTIATE

}  // namespace mmgc
