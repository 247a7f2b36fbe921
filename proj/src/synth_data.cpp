#include "mmgc/synth_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"

namespace mmgc {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string ambiguity_name(Ambiguity a) {
  switch (a) {
    case Ambiguity::kNone: return "none";
    case Ambiguity::kImage: return "image";
    case Ambiguity::kText: return "text";
  }
  return "?";
}

Ambiguity parse_ambiguity(const std::string& name) {
  if (name == "none") return Ambiguity::kNone;
  if (name == "image") return Ambiguity::kImage;
  if (name == "text") return Ambiguity::kText;
  throw FormatError("unknown ambiguity '" + name + "'");
}

std::string split_part_name(SplitPart p) {
  switch (p) {
    case SplitPart::kTrain: return "train";
    case SplitPart::kVal: return "val";
    case SplitPart::kTest: return "test";
  }
  return "?";
}

SplitPart parse_split_part(const std::string& name) {
  if (name == "train") return SplitPart::kTrain;
  if (name == "val") return SplitPart::kVal;
  if (name == "test") return SplitPart::kTest;
  throw FormatError("unknown split part '" + name + "'");
}

const std::vector<std::string>& DatasetSplit::part(SplitPart p) const {
  switch (p) {
    case SplitPart::kTrain: return train;
    case SplitPart::kVal: return val;
    case SplitPart::kTest: return test;
  }
  return test;
}

void GenParams::validate() const {
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in_unit(p_gc) || !in_unit(a_img) || !in_unit(a_txt)) throw InvalidParams("fractions must lie in [0, 1]");
  if (a_img + a_txt > 1.0 + 1e-12) throw InvalidParams("a_img + a_txt must not exceed 1");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidParams("sigma must be a finite value >= 0");
  if (n_samples == 0) throw InvalidParams("n_samples must be positive");
  if (channels == 0 || image_size == 0) throw InvalidParams("image dims must be positive");
}

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%06zu", index);
  return buf;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::array<const char*, 7> kVcdTemplate{"smooth", "white", "leukoplakia", "patch", "on", "vocal", "cord"};
constexpr std::array<const char*, 7> kGcTemplate{"irregular", "ulcerated", "exophytic", "mass", "on", "vocal", "cord"};
constexpr std::array<const char*, 5> kNeutralTemplate{"lesion", "on", "vocal", "cord", "observed"};
constexpr std::array<const char*, 10> kFillers{"left",  "right", "anterior", "posterior", "mild",
                                               "noted", "bilateral", "focal", "visible", "region"};

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  return splitmix64(splitmix64(splitmix64(seed) ^ index) ^ (stream * 0xD1B54A32D192ED03ULL));
}

Image render_image(const GenParams& params, std::uint64_t stream_seed, int label, bool ambiguous) {
  Rng rng(stream_seed);
  const std::size_t size = params.image_size;
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_int_distribution<int> freq(1, 3);
  const double ph_x = phase(rng), ph_y = phase(rng);
  const int fx = freq(rng), fy = freq(rng);
  const DiskStyle disk = ambiguous ? kAmbiguousDisk : (label == 1 ? kGcDisk : kVcdDisk);

  Image img;
  img.channels = static_cast<std::uint32_t>(params.channels);
  img.height = img.width = static_cast<std::uint32_t>(size);
  img.pixels.resize(params.channels * size * size);
  const double center = (static_cast<double>(size) - 1.0) / 2.0;
  std::normal_distribution<double> noise(0.0, params.sigma > 0.0 ? params.sigma : 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t c = 0; c < params.channels; ++c)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double dy = static_cast<double>(y) - center, dx = static_cast<double>(x) - center;
        double v;
        if (dx * dx + dy * dy <= disk.radius * disk.radius) {
          v = disk.intensity;
        } else {
          v = 0.25 + 0.05 * std::sin(two_pi * fx * static_cast<double>(x) / static_cast<double>(size) + ph_x) *
                         std::cos(two_pi * fy * static_cast<double>(y) / static_cast<double>(size) + ph_y);
        }
        if (params.sigma > 0.0) v += noise(rng);
        img.pixels[(c * size + y) * size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return img;
}

std::string render_report(std::uint64_t stream_seed, int label, bool ambiguous) {
  Rng rng(stream_seed);
  std::vector<std::string> words;
  if (ambiguous)
    words.assign(kNeutralTemplate.begin(), kNeutralTemplate.end());
  else if (label == 1)
    words.assign(kGcTemplate.begin(), kGcTemplate.end());
  else
    words.assign(kVcdTemplate.begin(), kVcdTemplate.end());

  const int fillers = std::uniform_int_distribution<int>(1, 2)(rng);
  for (int k = 0; k < fillers; ++k) {
    const auto pos = std::uniform_int_distribution<std::size_t>(0, words.size())(rng);
    const auto which = std::uniform_int_distribution<std::size_t>(0, kFillers.size() - 1)(rng);
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos), kFillers[which]);
  }
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) out += (i ? " " : "") + words[i];
  return out;
}

std::vector<PairedSample> generate(const GenParams& params) {
  params.validate();
  std::vector<PairedSample> samples(params.n_samples);
  for (std::size_t i = 0; i < params.n_samples; ++i) {
    Rng meta(mix_seed(params.seed, i, 0));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int label = unit(meta) < params.p_gc ? 1 : 0;
    const double bucket = unit(meta);
    const Ambiguity amb = bucket < params.a_img                ? Ambiguity::kImage
                          : bucket < params.a_img + params.a_txt ? Ambiguity::kText
                                                                 : Ambiguity::kNone;
    auto& s = samples[i];
    s.id = sample_id(i);
    s.label = label;
    s.ambiguous = amb;
    s.image = render_image(params, mix_seed(params.seed, i, 1), label, amb == Ambiguity::kImage);
    s.report = render_report(mix_seed(params.seed, i, 2), label, amb == Ambiguity::kText);
  }
  return samples;
}

double bayes_accuracy(const GenParams& params, Modality modality) {
  params.validate();
  if (params.sigma > 0.1) throw InvalidParams("closed-form Bayes accuracy assumes sigma <= 0.1");
  // On an uninformative sample the best guess is the majority class.
  const double majority = std::max(params.p_gc, 1.0 - params.p_gc);
  switch (modality) {
    case Modality::kImage: return (1.0 - params.a_img) + params.a_img * majority;
    case Modality::kText: return (1.0 - params.a_txt) + params.a_txt * majority;
    case Modality::kFused: {
      const double both_ambiguous = 0.0;  // buckets are disjoint
      return (1.0 - both_ambiguous) + both_ambiguous * majority;
    }
  }
  return 0.0;
}

DatasetSplit split(const std::vector<std::string>& ids, std::uint64_t seed) {
  const std::size_t n = ids.size();
  if (n < 10) throw TooFewSamples("need at least 10 samples to split 8:1:1, got " + std::to_string(n));
  std::vector<std::string> order = ids;
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = n / 10;
  DatasetSplit s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

// ---- persistence --------------------------------------------------------

namespace {
constexpr char kImageMagic[4] = {'M', 'M', 'G', 'I'};
}

void write_image_file(const Image& img, const fs::path& path) {
  if (img.pixels.size() != static_cast<std::size_t>(img.channels) * img.height * img.width)
    throw ShapeMismatch("image pixel count does not match its dims");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kImageMagic, 4);
  binio::write_le<std::uint32_t>(out, img.channels);
  binio::write_le<std::uint32_t>(out, img.height);
  binio::write_le<std::uint32_t>(out, img.width);
  for (const float v : img.pixels) binio::write_f32(out, v);
  if (!out) throw IoError("write failed: " + path.string());
}

Image read_image_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kImageMagic))
    throw FormatError("bad image magic in " + path.string());
  Image img;
  img.channels = binio::read_le<std::uint32_t>(in, "image header");
  img.height = binio::read_le<std::uint32_t>(in, "image header");
  img.width = binio::read_le<std::uint32_t>(in, "image header");
  const std::uint64_t count = static_cast<std::uint64_t>(img.channels) * img.height * img.width;
  if (count == 0 || count > (1ULL << 28)) throw FormatError("implausible image dims in " + path.string());
  img.pixels.resize(count);
  for (auto& v : img.pixels) v = binio::read_f32(in, "image data in " + path.string());
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + path.string());
  return img;
}

void save_dataset(const std::vector<PairedSample>& samples, const DatasetSplit& split, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());

  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw IoError("cannot write manifest in " + dir.string());
  for (const auto& s : samples) {
    const std::string rel = "images/" + s.id + ".mmgi";
    write_image_file(s.image, dir / rel);
    ordered_json rec;
    rec["id"] = s.id;
    rec["label"] = s.label;
    rec["report"] = s.report;
    rec["image"] = rel;
    rec["ambiguous"] = ambiguity_name(s.ambiguous);
    manifest << rec.dump() << '\n';
  }
  if (!manifest) throw IoError("manifest write failed in " + dir.string());

  std::ofstream split_out(dir / "split.jsonl", std::ios::binary);
  if (!split_out) throw IoError("cannot write split file in " + dir.string());
  for (const SplitPart p : {SplitPart::kTrain, SplitPart::kVal, SplitPart::kTest})
    for (const auto& id : split.part(p)) {
      ordered_json rec;
      rec["id"] = id;
      rec["split"] = split_part_name(p);
      split_out << rec.dump() << '\n';
    }
  if (!split_out) throw IoError("split write failed in " + dir.string());
}

LoadedDataset load_dataset(const fs::path& dir) {
  LoadedDataset out;
  std::ifstream manifest(dir / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw IoError("cannot open " + (dir / "manifest.jsonl").string());
  std::unordered_map<std::string, std::size_t> index;
  std::string line;
  for (std::size_t lineno = 1; std::getline(manifest, line); ++lineno) {
    if (line.empty()) continue;
    PairedSample s;
    std::string rel;
    try {
      const json rec = json::parse(line);
      s.id = rec.at("id").get<std::string>();
      s.label = rec.at("label").get<int>();
      s.report = rec.at("report").get<std::string>();
      rel = rec.at("image").get<std::string>();
      s.ambiguous = parse_ambiguity(rec.at("ambiguous").get<std::string>());
    } catch (const json::exception& e) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    if (s.label != 0 && s.label != 1) throw FormatError("sample " + s.id + ": label must be 0 or 1");
    const fs::path image_path = dir / rel;
    if (!fs::exists(image_path)) throw IoError("sample " + s.id + ": missing image file " + image_path.string());
    try {
      s.image = read_image_file(image_path);
    } catch (const FormatError& e) {
      throw FormatError("sample " + s.id + ": " + e.what());
    } catch (const IoError& e) {
      throw IoError("sample " + s.id + ": " + e.what());
    }
    if (!index.emplace(s.id, out.samples.size()).second) throw FormatError("duplicate sample id " + s.id);
    out.samples.push_back(std::move(s));
  }

  std::ifstream split_in(dir / "split.jsonl", std::ios::binary);
  if (!split_in) throw IoError("cannot open " + (dir / "split.jsonl").string());
  std::set<std::string> seen;
  for (std::size_t lineno = 1; std::getline(split_in, line); ++lineno) {
    if (line.empty()) continue;
    std::string id;
    SplitPart part;
    try {
      const json rec = json::parse(line);
      id = rec.at("id").get<std::string>();
      part = parse_split_part(rec.at("split").get<std::string>());
    } catch (const json::exception& e) {
      throw FormatError("split line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!index.contains(id)) throw FormatError("split references unknown sample " + id);
    if (!seen.insert(id).second) throw FormatError("sample " + id + " appears twice in the split");
    switch (part) {
      case SplitPart::kTrain: out.split.train.push_back(id); break;
      case SplitPart::kVal: out.split.val.push_back(id); break;
      case SplitPart::kTest: out.split.test.push_back(id); break;
    }
  }
  if (seen.size() != out.samples.size()) throw FormatError("split does not cover every sample");
  return out;
}

}  // namespace mmgc
