#include "mmgc/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "binary_io.hpp"

namespace mmgc {

namespace fs = std::filesystem;

namespace {
constexpr char kMagic[8] = {'M', 'M', 'G', 'C', 'K', 'P', 'T', '1'};
}

ModelConfig Checkpoint::config() const {
  if (!metadata.contains("config")) throw FormatError("checkpoint metadata has no config");
  return model_config_from_json(metadata.at("config"));
}

Vocabulary Checkpoint::vocabulary() const {
  if (!metadata.contains("vocab")) throw FormatError("checkpoint metadata has no vocabulary");
  try {
    return Vocabulary(metadata.at("vocab").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint vocabulary: ") + e.what());
  }
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > 0xFFFF) throw FormatError("tensor name too long: " + t.name);
    if (t.shape.size() > 0xFF) throw FormatError("tensor rank too large: " + t.name);
    if (shape_numel(t.shape) != t.values.size()) throw ShapeMismatch("tensor " + t.name + " shape/value mismatch");
    binio::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    binio::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (const auto d : t.shape) binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (const float v : t.values) binio::write_f32(out, v);
  }
  const std::string trailer = ckpt.metadata.dump();
  out.write(trailer.data(), static_cast<std::streamsize>(trailer.size()));
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(trailer.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatError("bad checkpoint magic in " + path.string());

  std::istringstream tail(bytes.substr(bytes.size() - 4));
  const std::uint32_t trailer_len = binio::read_le<std::uint32_t>(tail, "checkpoint trailer length");
  if (trailer_len > bytes.size() - sizeof(kMagic) - 8) throw FormatError("truncated checkpoint " + path.string());
  const std::size_t body_end = bytes.size() - 4 - trailer_len;

  Checkpoint ckpt;
  try {
    ckpt.metadata = nlohmann::json::parse(bytes.substr(body_end, trailer_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint metadata is not valid JSON: " + std::string(e.what()));
  }
  if (!ckpt.metadata.is_object()) throw FormatError("checkpoint metadata must be a JSON object");

  std::istringstream body(bytes.substr(sizeof(kMagic), body_end - sizeof(kMagic)));
  const std::uint32_t count = binio::read_le<std::uint32_t>(body, "tensor count");
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = binio::read_le<std::uint16_t>(body, "tensor name length");
    t.name.resize(name_len);
    if (!body.read(t.name.data(), name_len)) throw FormatError("truncated tensor name");
    if (!names.insert(t.name).second) throw FormatError("duplicate tensor name " + t.name);
    const auto rank = binio::read_le<std::uint8_t>(body, "tensor rank");
    std::uint64_t numel = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      t.shape.push_back(binio::read_le<std::uint32_t>(body, "tensor dims"));
      numel *= t.shape.back();
    }
    if (numel * 4 > bytes.size()) throw FormatError("tensor " + t.name + " larger than the file");
    t.values.resize(numel);
    for (auto& v : t.values) v = binio::read_f32(body, "data of tensor " + t.name);
    ckpt.tensors.push_back(std::move(t));
  }
  if (body.peek() != std::char_traits<char>::eof()) throw FormatError("unexpected bytes after tensor table");
  return ckpt;
}

template <typename T>
Checkpoint make_checkpoint(const MmgcNet<T>& net, const Vocabulary& vocab, const nlohmann::json& extra) {
  Checkpoint ckpt;
  for (const auto& [name, p] : net.parameters()) {
    NamedTensor t{name, p.shape(), {}};
    t.values.assign(p.data().begin(), p.data().end());
    ckpt.tensors.push_back(std::move(t));
  }
  ckpt.metadata["config"] = to_json(net.config);
  ckpt.metadata["vocab"] = vocab.tokens();
  for (auto it = extra.begin(); it != extra.end(); ++it) ckpt.metadata[it.key()] = it.value();
  return ckpt;
}

template <typename T>
void load_parameters(MmgcNet<T>& net, const Checkpoint& ckpt) {
  const auto params = net.parameters();
  if (params.size() != ckpt.tensors.size())
    throw ConfigMismatch("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model has " +
                         std::to_string(params.size()));
  for (const auto& [name, p] : params) {
    const NamedTensor* t = ckpt.find(name);
    if (!t) throw ConfigMismatch("checkpoint lacks tensor " + name);
    if (t->shape != p.shape())
      throw ConfigMismatch("tensor " + name + " is " + shape_str(t->shape) + ", model expects " + shape_str(p.shape()));
    auto dst = Tensor<T>(p).mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(t->values[i]);
  }
}

template <typename T>
MmgcNet<T> model_from_checkpoint(const Checkpoint& ckpt) {
  auto net = MmgcNet<T>::init(ckpt.config(), 0);
  load_parameters(net, ckpt);
  return net;
}

#define MMGC_INSTANTIATE(T)                                                                          \
  template Checkpoint make_checkpoint<T>(const MmgcNet<T>&, const Vocabulary&, const nlohmann::json&); \
  template void load_parameters<T>(MmgcNet<T>&, const Checkpoint&);                                  \
  template MmgcNet<T> model_from_checkpoint<T>(const Checkpoint&);

MMGC_INSTANTIATE(float)
MMGC_INSTANTIATE(double)

#undef MMGC_INSTANTIATE

}  // namespace mmgc
