#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmgc/image_encoder.hpp"
#include "mmgc/report_encoder.hpp"

namespace mmgc {

enum class Label : int { kVCD = 0, kGC = 1 };
enum class Ambiguity { kNone, kImage, kText };
enum class Modality { kImage, kText, kFused };
enum class SplitPart { kTrain, kVal, kTest };

std::string ambiguity_name(Ambiguity a);
Ambiguity parse_ambiguity(const std::string& name);
std::string split_part_name(SplitPart p);
SplitPart parse_split_part(const std::string& name);

struct GenParams {
  std::size_t n_samples = 2000;
  double p_gc = 0.5;   // class prior of glottic carcinoma
  double a_img = 0.3;  // fraction with a class-uninformative image
  double a_txt = 0.3;  // fraction with a class-uninformative report
  double sigma = 0.05; // pixel noise std
  std::uint64_t seed = 0;
  std::size_t image_size = 32;
  std::size_t channels = 1;

  // Throws InvalidParams.
  void validate() const;
};

struct PairedSample {
  std::string id;
  Image image;
  std::string report;
  int label = 0;
  Ambiguity ambiguous = Ambiguity::kNone;

  bool operator==(const PairedSample&) const = default;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  const std::vector<std::string>& part(SplitPart p) const;
  bool operator==(const DatasetSplit&) const = default;
};

// Disk radii (pixels) and intensities for each rendering.
struct DiskStyle {
  double radius;
  double intensity;
};
inline constexpr DiskStyle kVcdDisk{5.0, 0.55};
inline constexpr DiskStyle kGcDisk{9.0, 0.85};
inline constexpr DiskStyle kAmbiguousDisk{7.0, 0.70};

std::string sample_id(std::size_t index);
// splitmix64-based stream derivation: one independent seed per (seed, index, stream).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream);

// Renders one image from its own generator seed. When `ambiguous`, the label
// is ignored entirely, so both classes share one rendering distribution.
Image render_image(const GenParams& params, std::uint64_t stream_seed, int label, bool ambiguous);
std::string render_report(std::uint64_t stream_seed, int label, bool ambiguous);

std::vector<PairedSample> generate(const GenParams& params);

// Closed-form best achievable accuracy for one modality or both. Requires
// sigma <= 0.1 so that informative renderings stay separable.
double bayes_accuracy(const GenParams& params, Modality modality);

// Seeded shuffle then floor(0.8n) / floor(0.1n) / remainder. n >= 10.
DatasetSplit split(const std::vector<std::string>& ids, std::uint64_t seed);

// Directory layout: manifest.jsonl, split.jsonl, images/<id>.mmgi
void save_dataset(const std::vector<PairedSample>& samples, const DatasetSplit& split,
                  const std::filesystem::path& dir);
struct LoadedDataset {
  std::vector<PairedSample> samples;
  DatasetSplit split;
};
LoadedDataset load_dataset(const std::filesystem::path& dir);

// "MMGI" + u32 C,H,W (LE) + C·H·W LE float32.
void write_image_file(const Image& img, const std::filesystem::path& path);
Image read_image_file(const std::filesystem::path& path);

}  // namespace mmgc
