#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mmgc {

enum class Averaging { kMacro, kMicro, kWeighted };
Averaging parse_averaging(const std::string& name);
std::string averaging_name(Averaging a);

// counts[true][pred] for the two classes (0 = VCD, 1 = GC).
struct ConfusionMatrix {
  std::array<std::array<std::size_t, 2>, 2> counts{};

  static ConfusionMatrix from(std::span<const int> predictions, std::span<const int> labels);
  std::size_t total() const;
};

struct MetricsReport {
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double recall_vcd = 0;
  double recall_gc = 0;

  bool operator==(const MetricsReport&) const = default;
};

// Per-class terms with a zero denominator contribute 0.
MetricsReport compute_metrics(const ConfusionMatrix& cm, Averaging averaging = Averaging::kMacro);

struct MetricsSummary {
  MetricsReport mean;
  MetricsReport std;  // population std
  std::size_t trials = 0;
};
MetricsSummary summarize(std::span<const MetricsReport> reports);

nlohmann::ordered_json to_json(const MetricsReport& m);
nlohmann::ordered_json to_json(const MetricsSummary& s);

}  // namespace mmgc
