#include "mmgc/model_config.hpp"

#include "mmgc/errors.hpp"

namespace mmgc {

Variant parse_variant(const std::string& name) {
  if (name == "m1") return Variant::kM1;
  if (name == "m2") return Variant::kM2;
  if (name == "m3") return Variant::kM3;
  throw ConfigError("unknown variant '" + name + "' (expected m1, m2 or m3)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kM1: return "m1";
    case Variant::kM2: return "m2";
    case Variant::kM3: return "m3";
  }
  return "?";
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw InvalidParams(msg);
  };
  require(image_channels > 0 && image_size > 0 && patch_size > 0, "image dims must be positive");
  require(image_size % patch_size == 0, "image_size must be divisible by patch_size");
  require(vision_heads > 0 && vision_dim % vision_heads == 0, "vision_dim must be divisible by vision_heads");
  require(text_heads > 0 && text_dim % text_heads == 0, "text_dim must be divisible by text_heads");
  require(num_queries > 0, "num_queries must be positive");
  require(vocab_size >= 2, "vocab_size must cover PAD and UNK");
  require(max_len > 0, "max_len must be positive");
  require(proj_dim > 0 && proj_layers > 0 && classifier_layers > 0, "fusion head dims must be positive");
  require(num_classes == 2, "exactly two classes (VCD, GC) are supported");
}

nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"image_channels", c.image_channels}, {"image_size", c.image_size},
          {"patch_size", c.patch_size},         {"vision_dim", c.vision_dim},
          {"vision_layers", c.vision_layers},   {"vision_heads", c.vision_heads},
          {"num_queries", c.num_queries},       {"qformer_layers", c.qformer_layers},
          {"vocab_size", c.vocab_size},         {"text_dim", c.text_dim},
          {"text_layers", c.text_layers},       {"text_heads", c.text_heads},
          {"max_len", c.max_len},               {"proj_dim", c.proj_dim},
          {"proj_layers", c.proj_layers},       {"classifier_layers", c.classifier_layers},
          {"num_classes", c.num_classes},       {"variant", variant_name(c.variant)},
          {"freeze_image", c.freeze_image},     {"freeze_text", c.freeze_text}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.image_channels = j.at("image_channels").get<std::size_t>();
    c.image_size = j.at("image_size").get<std::size_t>();
    c.patch_size = j.at("patch_size").get<std::size_t>();
    c.vision_dim = j.at("vision_dim").get<std::size_t>();
    c.vision_layers = j.at("vision_layers").get<std::size_t>();
    c.vision_heads = j.at("vision_heads").get<std::size_t>();
    c.num_queries = j.at("num_queries").get<std::size_t>();
    c.qformer_layers = j.at("qformer_layers").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.text_dim = j.at("text_dim").get<std::size_t>();
    c.text_layers = j.at("text_layers").get<std::size_t>();
    c.text_heads = j.at("text_heads").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.proj_dim = j.at("proj_dim").get<std::size_t>();
    c.proj_layers = j.at("proj_layers").get<std::size_t>();
    c.classifier_layers = j.at("classifier_layers").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.freeze_image = j.at("freeze_image").get<bool>();
    c.freeze_text = j.at("freeze_text").get<bool>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

}  // namespace mmgc
