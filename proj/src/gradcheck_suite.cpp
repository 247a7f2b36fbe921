#include "mmgc/gradcheck_suite.hpp"

#include <chrono>
#include <functional>
#include <random>

#include "mmgc/fusion.hpp"
#include "mmgc/gradcheck.hpp"
#include "mmgc/synth_data.hpp"

namespace mmgc {

namespace {

using D = double;

// Fourth-order stencil keeps truncation error far below the tolerance at a
// step large enough that rounding noise stays small. The floor covers
// coordinates whose true gradient is exactly zero (an attention key bias:
// softmax ignores a shift shared by every score), where both sides are noise.
constexpr FiniteDiffOptions kSuiteDiff{1e-3, Stencil::kCentral4, 1e-6};
using Fn = std::function<Tensor<D>()>;

struct Case {
  std::string name;
  std::function<void(Rng&, const std::function<Tensor<D>(const Tensor<D>&)>&, Fn&, std::vector<Tensor<D>>&)> build;
};

Tensor<D> random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
  std::normal_distribution<D> n(0.0, 1.0);
  std::vector<D> v(shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor<D>::from(std::move(shape), std::move(v), requires_grad);
}

// sum(R ⊙ y) with a fixed random R. Plain sum(y) would hide errors in ops
// whose outputs sum to a constant (softmax, layer norm).
std::function<Tensor<D>(const Tensor<D>&)> projector(Rng& rng) {
  auto cache = std::make_shared<std::vector<Tensor<D>>>();
  auto seed = rng();
  return [cache, seed](const Tensor<D>& y) {
    for (const auto& r : *cache)
      if (r.shape() == y.shape()) return sum(mul(r, y));
    Rng local(seed + cache->size());
    cache->push_back(random_tensor(y.shape(), local, false));
    return sum(mul(cache->back(), y));
  };
}

std::vector<Tensor<D>> tensors_of(const NamedParams<D>& params) {
  std::vector<Tensor<D>> out;
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

ModelConfig tiny_config(Variant v) {
  ModelConfig c;
  c.image_channels = 1;
  c.image_size = 8;
  c.patch_size = 4;
  c.vision_dim = 8;
  c.vision_layers = 1;
  c.vision_heads = 2;
  c.num_queries = 2;
  c.qformer_layers = 1;
  c.vocab_size = 6;
  c.text_dim = 8;
  c.text_layers = 1;
  c.text_heads = 2;
  c.max_len = 4;
  c.proj_dim = 4;
  c.num_classes = 2;
  c.variant = v;
  return c;
}

TokenSequence tiny_tokens(std::vector<int> ids, std::size_t max_len) {
  TokenSequence s;
  s.length = ids.size();
  s.ids = std::move(ids);
  s.ids.resize(max_len, Vocabulary::kPad);
  return s;
}

// Builds loss and inputs for one component. `wrap` marks the component's
// output so a sabotage can corrupt exactly that backward.
using Wrap = std::function<Tensor<D>(const Tensor<D>&)>;

std::vector<Case> all_cases() {
  std::vector<Case> cases;

  cases.push_back({"matmul", [](Rng& rng, const Wrap& wrap, Fn& f, std::vector<Tensor<D>>& in) {
                     auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
                     auto c = random_tensor({2, 4}, rng);
                     auto proj = projector(rng);
                     in = {a, b, c};
                     f = [=] { return proj(wrap(add(matmul(a, b), transpose(matmul_nt(c, a))))); };
                   }});

  cases.push_back({"linear", [](Rng& rng, const Wrap& wrap, Fn& f, std::vector<Tensor<D>>& in) {
                     auto lin = Linear<D>::init(3, 4, rng);
                     auto x = random_tensor({2, 3}, rng);
                     auto proj = projector(rng);
                     in = {x, lin.weight, lin.bias};
                     f = [=] { return proj(wrap(lin.forward(x))); };
                   }});

  cases.push_back({"embedding", [](Rng& rng, const Wrap& wrap, Fn& f, std::vector<Tensor<D>>& in) {
                     auto emb = Embedding<D>::init(5, 3, rng);
                     auto proj = projector(rng);
                     in = {emb.table};
                     f = [=] {
                       const std::vector<int> ids{4, 1, 1, 0};
                       return proj(wrap(emb.forward(ids)));
                     };
                   }});

  cases.push_back({"layer_norm", [](Rng& rng, const Wrap& wrap, Fn& f, std::vector<Tensor<D>>& in) {
                     auto x = random_tensor({3, 5}, rng);
                     auto g = random_tensor({5}, rng), b = random_tensor({5}, rng);
                     auto proj = projector(rng);
                     in = {x, g, b};
                     f = [=] { return proj(wrap(layer_norm(x, g, b))); };
                   }});

  cases.push_back({"gelu", [](Rng& rng, const Wrap& wrap, Fn& f, std::vector<Tensor<D>>& in) {
                     auto x = random_tensor({2, 5}, rng);
                     auto proj = projector(rng);
                     in = {x};
                     f = [=] { return proj(wrap(gelu(x))); };
                   }});

  cases.push_back({"softmax", [](Rng& rng, const Wrap& wrap, Fn& f, std::vector<Tensor<D>>& in) {
                     auto x = random_tensor({3, 4}, rng);
                     auto proj = projector(rng);
                     in = {x};
                     f = [=] {
                       const auto mask = AttentionMask::causal(3);
                       auto causal = slice_cols(x, 0, 3);
                       return proj(wrap(softmax(x))) + proj(wrap(masked_softmax(causal, mask))) +
                              proj(wrap(log_softmax(x)));
                     };
                   }});

  cases.push_back({"l2_normalize", [](Rng& rng, const Wrap& wrap, Fn& f, std::vector<Tensor<D>>& in) {
                     auto x = random_tensor({6}, rng);
                     auto proj = projector(rng);
                     in = {x};
                     f = [=] { return proj(wrap(l2_normalize(x))); };
                   }});

  cases.push_back({"cross_entropy", [](Rng& rng, const Wrap& wrap, Fn& f, std::vector<Tensor<D>>& in) {
                     auto x = random_tensor({2}, rng);
                     in = {x};
                     f = [=] { return wrap(cross_entropy_logits(x, 1)); };
                   }});

  cases.push_back({"attention", [](Rng& rng, const Wrap& wrap, Fn& f, std::vector<Tensor<D>>& in) {
                     auto mha = MultiHeadAttention<D>::init(8, 2, rng);
                     auto x = random_tensor({3, 8}, rng);
                     auto proj = projector(rng);
                     NamedParams<D> p;
                     mha.collect("attn", p);
                     in = tensors_of(p);
                     in.push_back(x);
                     f = [=] { return proj(wrap(mha.forward(x, x))); };
                   }});

  cases.push_back({"cross_attention", [](Rng& rng, const Wrap& wrap, Fn& f, std::vector<Tensor<D>>& in) {
                     auto mha = MultiHeadAttention<D>::init(8, 2, rng);
                     auto q = random_tensor({2, 8}, rng), kv = random_tensor({4, 8}, rng);
                     auto proj = projector(rng);
                     NamedParams<D> p;
                     mha.collect("attn", p);
                     in = tensors_of(p);
                     in.push_back(q);
                     in.push_back(kv);
                     f = [=] { return proj(wrap(mha.forward(q, kv))); };
                   }});

  cases.push_back({"transformer_block", [](Rng& rng, const Wrap& wrap, Fn& f, std::vector<Tensor<D>>& in) {
                     auto block = TransformerBlock<D>::init(8, 2, rng);
                     auto x = random_tensor({3, 8}, rng);
                     auto proj = projector(rng);
                     NamedParams<D> p;
                     block.collect("block", p);
                     in = tensors_of(p);
                     in.push_back(x);
                     f = [=] {
                       const auto mask = AttentionMask::causal(3);
                       return proj(wrap(block.forward(x))) + proj(wrap(block.forward(x, &mask)));
                     };
                   }});

  cases.push_back({"vision_encoder", [](Rng& rng, const Wrap& wrap, Fn& f, std::vector<Tensor<D>>& in) {
                     const auto cfg = tiny_config(Variant::kM1);
                     auto vit = VitEncoder<D>::init(cfg, rng);
                     auto img = random_tensor({1, 8, 8}, rng);
                     auto proj = projector(rng);
                     NamedParams<D> p;
                     vit.collect("vit", p);
                     in = tensors_of(p);
                     in.push_back(img);
                     f = [=] { return proj(wrap(vit.encode(img))); };
                   }});

  cases.push_back({"qformer", [](Rng& rng, const Wrap& wrap, Fn& f, std::vector<Tensor<D>>& in) {
                     const auto cfg = tiny_config(Variant::kM1);
                     auto qf = QFormer<D>::init(cfg, rng);
                     auto feats = random_tensor({4, 8}, rng);
                     auto proj = projector(rng);
                     NamedParams<D> p;
                     qf.collect("qformer", p);
                     in = tensors_of(p);
                     in.push_back(feats);
                     f = [=] { return proj(wrap(qf.encode(feats))); };
                   }});

  cases.push_back({"report_encoder", [](Rng& rng, const Wrap& wrap, Fn& f, std::vector<Tensor<D>>& in) {
                     const auto cfg = tiny_config(Variant::kM2);
                     auto enc = ReportEncoder<D>::init(cfg, rng);
                     auto proj = projector(rng);
                     NamedParams<D> p;
                     enc.collect("report", p);
                     in = tensors_of(p);
                     f = [=] {
                       const auto seq = tiny_tokens({2, 5, 3}, cfg.max_len);
                       return proj(wrap(enc.hidden_states(seq))) + proj(wrap(enc.encode(seq)));
                     };
                   }});

  cases.push_back({"fusion_head", [](Rng& rng, const Wrap& wrap, Fn& f, std::vector<Tensor<D>>& in) {
                     auto cfg = tiny_config(Variant::kM3);
                     cfg.proj_layers = 2;
                     cfg.classifier_layers = 2;
                     auto head = FusionHead<D>::init(cfg, rng);
                     auto v = random_tensor({8}, rng), t = random_tensor({8}, rng);
                     auto proj = projector(rng);
                     NamedParams<D> p;
                     head.collect("head", p);
                     in = tensors_of(p);
                     in.push_back(v);
                     in.push_back(t);
                     f = [=] {
                       const auto joint = head.fuse(l2_normalize(head.project_vision(v)), l2_normalize(head.project_text(t)));
                       return proj(wrap(head.classify(joint).logits));
                     };
                   }});

  for (const Variant variant : {Variant::kM1, Variant::kM2, Variant::kM3}) {
    cases.push_back({"forward_" + variant_name(variant),
                     [variant](Rng& rng, const Wrap& wrap, Fn& f, std::vector<Tensor<D>>& in) {
                       const auto cfg = tiny_config(variant);
                       const auto net = MmgcNet<D>::init(cfg, rng());
                       in = tensors_of(net.trainable_parameters());
                       std::vector<Tensor<D>> images;
                       for (int i = 0; i < 2; ++i) images.push_back(random_tensor({1, 8, 8}, rng, uses_image(variant)));
                       if (uses_image(variant))
                         for (const auto& img : images) in.push_back(img);
                       f = [=] {
                         const std::vector<TokenSequence> seqs{tiny_tokens({2, 5, 3}, cfg.max_len),
                                                               tiny_tokens({4, 1}, cfg.max_len)};
                         Tensor<D> total;
                         for (int i = 0; i < 2; ++i) {
                           const auto loss = wrap(net.forward(&images[i], &seqs[i], i).loss);
                           total = total.defined() ? total + loss : loss;
                         }
                         return total;
                       };
                     }});
  }
  return cases;
}

}  // namespace

std::vector<std::string> gradcheck_components() {
  std::vector<std::string> names;
  for (const auto& c : all_cases()) names.push_back(c.name);
  return names;
}

std::vector<ComponentCheck> run_gradcheck_suite(const GradcheckSuiteOptions& options) {
  std::vector<ComponentCheck> out;
  std::size_t index = 0;
  for (const auto& c : all_cases()) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(mix_seed(options.seed, index++, 0));
    const bool sabotaged = c.name == options.sabotage;
    const Wrap wrap = [sabotaged](const Tensor<D>& y) { return sabotaged ? negate_grad(y) : y; };
    Fn f;
    std::vector<Tensor<D>> inputs;
    c.build(rng, wrap, f, inputs);
    const auto r = finite_diff_check<D>(f, inputs, kSuiteDiff);
    ComponentCheck check;
    check.name = c.name;
    check.max_rel_error = r.max_rel_error;
    check.checked = r.checked;
    check.worst_input = r.worst_tensor;
    check.worst_index = r.worst_index;
    check.passed = r.max_rel_error <= options.tolerance;
    check.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.push_back(check);
  }
  return out;
}

}  // namespace mmgc
