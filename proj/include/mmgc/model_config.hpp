#pragma once

#include <cstddef>
#include <string>

#include <nlohmann/json.hpp>

namespace mmgc {

// Ablation variants: image only, report only, both.
enum class Variant { kM1, kM2, kM3 };

Variant parse_variant(const std::string& name);  // "m1" | "m2" | "m3", else ConfigError
std::string variant_name(Variant v);
inline bool uses_image(Variant v) { return v != Variant::kM2; }
inline bool uses_text(Variant v) { return v != Variant::kM1; }

struct ModelConfig {
  // image encoder
  std::size_t image_channels = 1;
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t vision_dim = 64;
  std::size_t vision_layers = 2;
  std::size_t vision_heads = 4;
  std::size_t num_queries = 8;
  std::size_t qformer_layers = 2;
  // report encoder
  std::size_t vocab_size = 64;
  std::size_t text_dim = 64;
  std::size_t text_layers = 2;
  std::size_t text_heads = 4;
  std::size_t max_len = 16;
  // fusion head
  std::size_t proj_dim = 64;
  std::size_t proj_layers = 1;
  std::size_t classifier_layers = 1;
  std::size_t num_classes = 2;
  Variant variant = Variant::kM3;
  bool freeze_image = false;
  bool freeze_text = false;

  std::size_t num_patches() const {
    return (image_size / patch_size) * (image_size / patch_size);
  }
  // Throws InvalidParams on inconsistent dimensions.
  void validate() const;
};

nlohmann::ordered_json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace mmgc
