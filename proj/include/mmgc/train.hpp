#pragma once

#include <cstdint>
#include <functional>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmgc/checkpoint.hpp"
#include "mmgc/fusion.hpp"
#include "mmgc/metrics.hpp"
#include "mmgc/optim.hpp"
#include "mmgc/synth_data.hpp"

namespace mmgc {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double peak_lr = 3e-4;
  bool paper_lr = false;          // pins the peak to 1e-5
  double warmup_fraction = 0.1;   // of total optimizer steps
  AdamWConfig adamw;
  Averaging averaging = Averaging::kMacro;

  double effective_peak_lr() const { return paper_lr ? kPaperPeakLr : peak_lr; }
  Schedule schedule(std::size_t train_size) const;
  void validate() const;
};
nlohmann::ordered_json to_json(const TrainConfig& cfg);

// Samples + split + vocabulary with reports pre-tokenized for one max_len.
struct Dataset {
  std::vector<PairedSample> samples;
  DatasetSplit split;
  Vocabulary vocab;
  std::size_t max_len = 16;
  std::vector<TokenSequence> tokens;  // parallel to samples

  static Dataset make(std::vector<PairedSample> samples, DatasetSplit split, Vocabulary vocab, std::size_t max_len);
  // Loads a generated directory; uses <dir>/vocab.txt when present, else
  // builds the vocabulary from every report.
  static Dataset load(const std::filesystem::path& dir, std::size_t max_len);

  std::vector<std::size_t> indices(SplitPart part) const;
  ModelInput input(std::size_t index) const;
  // Throws ConfigMismatch when the model cannot consume this dataset.
  void check_compatible(const ModelConfig& cfg) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;  // mean over the epoch's minibatch losses
  MetricsReport val;
  std::optional<MetricsReport> train;  // only when TrainOptions::eval_train
};

struct TrainOptions {
  // Overrides the train split (e.g. a small subset for capacity checks).
  std::optional<std::vector<std::size_t>> train_indices;
  // Initial parameters instead of a fresh seeded init.
  const Checkpoint* resume = nullptr;
  bool eval_train = false;
  // Stop as soon as training accuracy reaches 1 (requires eval_train).
  bool stop_at_perfect_train = false;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Checkpoint best;               // best validation accuracy, earliest epoch on ties
  std::size_t best_epoch = 0;
  MetricsReport best_val;
  std::vector<EpochRecord> history;
  double initial_train_loss = 0;  // mean loss over the train set before any step
};

template <typename T>
TrainResult train(const ModelConfig& cfg, const TrainConfig& tcfg, const Dataset& data, std::uint64_t seed,
                  const TrainOptions& options = {});

// Argmax predictions (ties -> class 0) over the given samples.
template <typename T>
std::vector<int> predict(const MmgcNet<T>& net, const Dataset& data, std::span<const std::size_t> indices);

template <typename T>
MetricsReport evaluate(const MmgcNet<T>& net, const Dataset& data, std::span<const std::size_t> indices,
                       Averaging averaging = Averaging::kMacro);

template <typename T>
MetricsReport evaluate(const Checkpoint& ckpt, const Dataset& data, SplitPart part,
                       Averaging averaging = Averaging::kMacro);

// Mean cross-entropy over the given samples, no graph recorded.
template <typename T>
double mean_loss(const MmgcNet<T>& net, const Dataset& data, std::span<const std::size_t> indices);

struct TrialRecord {
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  MetricsReport val;
  MetricsReport test;
  Checkpoint checkpoint;
  double seconds = 0;  // wall time of this trial
};

struct TrialsResult {
  Variant variant = Variant::kM3;
  std::vector<TrialRecord> trials;
  MetricsSummary test_summary;
};

// Seeds base_seed + 0 .. n-1; metrics on the test split.
template <typename T>
TrialsResult run_trials(const ModelConfig& cfg, const TrainConfig& tcfg, const Dataset& data, std::size_t n_trials,
                        std::uint64_t base_seed, std::size_t jobs = 1);

struct AblationResult {
  std::vector<TrialsResult> rows;  // m1, m2, m3
};

// Same dataset, split and seeds for all three variants. With jobs > 1 the
// independent (variant, trial) runs execute concurrently; results are
// merged in (variant, seed) order.
template <typename T>
AblationResult run_ablation(const ModelConfig& base, const TrainConfig& tcfg, const Dataset& data,
                            std::size_t n_trials, std::uint64_t base_seed, std::size_t jobs = 1);

// ---- report writers -----------------------------------------------------

nlohmann::ordered_json trials_json(const TrialsResult& r);
nlohmann::ordered_json ablation_json(const AblationResult& r);
// One row per variant: variant + {accuracy, precision, recall, f1} x {mean, std}.
std::string ablation_table_csv(const AblationResult& r);
// One row per variant x trial plus mean and std rows per variant.
std::string trials_csv(const std::vector<TrialsResult>& rows);
nlohmann::ordered_json history_json(const TrainResult& r);

}  // namespace mmgc
