#include "mmgc/metrics.hpp"

#include <cmath>

#include "mmgc/errors.hpp"

namespace mmgc {

Averaging parse_averaging(const std::string& name) {
  if (name == "macro") return Averaging::kMacro;
  if (name == "micro") return Averaging::kMicro;
  if (name == "weighted") return Averaging::kWeighted;
  throw ConfigError("unknown averaging '" + name + "' (expected macro, micro or weighted)");
}

std::string averaging_name(Averaging a) {
  switch (a) {
    case Averaging::kMacro: return "macro";
    case Averaging::kMicro: return "micro";
    case Averaging::kWeighted: return "weighted";
  }
  return "?";
}

ConfusionMatrix ConfusionMatrix::from(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw ShapeMismatch("predictions and labels differ in length");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 1 || predictions[i] < 0 || predictions[i] > 1)
      throw IndexError("class id outside {0, 1}");
    ++cm.counts[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predictions[i])];
  }
  return cm;
}

std::size_t ConfusionMatrix::total() const {
  return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
}

namespace {
double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

MetricsReport compute_metrics(const ConfusionMatrix& cm, Averaging averaging) {
  const auto& c = cm.counts;
  const std::size_t total = cm.total();
  MetricsReport r;
  r.accuracy = ratio(c[0][0] + c[1][1], total);

  std::array<double, 2> precision{}, recall{}, f1{}, support{};
  for (std::size_t k = 0; k < 2; ++k) {
    const std::size_t other = 1 - k;
    const std::size_t tp = c[k][k];
    precision[k] = ratio(tp, tp + c[other][k]);
    recall[k] = ratio(tp, tp + c[k][other]);
    const double pr = precision[k] + recall[k];
    f1[k] = pr == 0.0 ? 0.0 : 2.0 * precision[k] * recall[k] / pr;
    support[k] = ratio(c[k][0] + c[k][1], total);
  }
  r.recall_vcd = recall[0];
  r.recall_gc = recall[1];

  switch (averaging) {
    case Averaging::kMacro:
      r.precision = (precision[0] + precision[1]) / 2.0;
      r.recall = (recall[0] + recall[1]) / 2.0;
      r.f1 = (f1[0] + f1[1]) / 2.0;
      break;
    case Averaging::kMicro:
      // Single-label: pooled TP / pooled predictions = accuracy.
      r.precision = r.recall = r.f1 = r.accuracy;
      break;
    case Averaging::kWeighted:
      r.precision = support[0] * precision[0] + support[1] * precision[1];
      r.recall = support[0] * recall[0] + support[1] * recall[1];
      r.f1 = support[0] * f1[0] + support[1] * f1[1];
      break;
  }
  return r;
}

MetricsSummary summarize(std::span<const MetricsReport> reports) {
  MetricsSummary s;
  s.trials = reports.size();
  if (reports.empty()) return s;
  const double n = static_cast<double>(reports.size());
  auto field_stats = [&](double MetricsReport::*field) {
    const double first = reports.front().*field;
    bool constant = true;
    double mean = 0;
    for (const auto& r : reports) {
      mean += r.*field;
      constant = constant && r.*field == first;
    }
    mean = constant ? first : mean / n;
    double var = 0;
    for (const auto& r : reports) var += (r.*field - mean) * (r.*field - mean);
    s.mean.*field = mean;
    s.std.*field = std::sqrt(var / n);
  };
  for (auto f : {&MetricsReport::accuracy, &MetricsReport::precision, &MetricsReport::recall, &MetricsReport::f1,
                 &MetricsReport::recall_vcd, &MetricsReport::recall_gc})
    field_stats(f);
  return s;
}

nlohmann::ordered_json to_json(const MetricsReport& m) {
  nlohmann::ordered_json j;
  j["accuracy"] = m.accuracy;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  j["recall_per_class"] = {{"VCD", m.recall_vcd}, {"GC", m.recall_gc}};
  return j;
}

nlohmann::ordered_json to_json(const MetricsSummary& s) {
  return {{"trials", s.trials}, {"mean", to_json(s.mean)}, {"std", to_json(s.std)}};
}

}  // namespace mmgc
