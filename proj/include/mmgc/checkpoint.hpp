#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmgc/fusion.hpp"

namespace mmgc {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;

  bool operator==(const NamedTensor&) const = default;
};

// Binary layout (all integers little-endian):
//   "MMGCKPT1" | u32 count | count × (u16 name_len, name, u8 rank, rank × u32 dim, f32 data)
//   | JSON metadata | u32 metadata_len
struct Checkpoint {
  std::vector<NamedTensor> tensors;
  nlohmann::json metadata = nlohmann::json::object();

  ModelConfig config() const;          // from metadata["config"]
  Vocabulary vocabulary() const;       // from metadata["vocab"]
  const NamedTensor* find(const std::string& name) const;
  bool operator==(const Checkpoint& other) const {
    return tensors == other.tensors && metadata == other.metadata;
  }
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Snapshot of every parameter plus config and vocabulary; `extra` is merged
// into the metadata (seed, epoch, vocab path, ...).
template <typename T>
Checkpoint make_checkpoint(const MmgcNet<T>& net, const Vocabulary& vocab,
                           const nlohmann::json& extra = nlohmann::json::object());

// Rebuilds the architecture from the stored config and copies every tensor
// in. Missing, extra, or mis-shaped tensors raise ConfigMismatch.
template <typename T>
MmgcNet<T> model_from_checkpoint(const Checkpoint& ckpt);

// Copies checkpoint values into an already-built model of the same shape.
template <typename T>
void load_parameters(MmgcNet<T>& net, const Checkpoint& ckpt);

}  // namespace mmgc
