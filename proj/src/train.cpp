#include "mmgc/train.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <sstream>
#include <thread>
#include <unordered_map>

namespace mmgc {

// ---- config -------------------------------------------------------------

Schedule TrainConfig::schedule(std::size_t train_size) const {
  const std::size_t per_epoch = (train_size + batch_size - 1) / batch_size;
  Schedule s;
  s.peak = effective_peak_lr();
  s.total_steps = std::max<std::size_t>(1, per_epoch * epochs);
  s.warmup_steps = static_cast<std::size_t>(std::floor(warmup_fraction * static_cast<double>(s.total_steps)));
  return s;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(peak_lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw ConfigError("warmup_fraction must lie in [0, 1]");
  if (!(adamw.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"peak_lr", c.effective_peak_lr()},
          {"paper_lr", c.paper_lr},
          {"warmup_fraction", c.warmup_fraction},
          {"beta1", c.adamw.beta1},
          {"beta2", c.adamw.beta2},
          {"adam_eps", c.adamw.eps},
          {"weight_decay", c.adamw.weight_decay},
          {"averaging", averaging_name(c.averaging)}};
}

// ---- dataset ------------------------------------------------------------

Dataset Dataset::make(std::vector<PairedSample> samples, DatasetSplit split, Vocabulary vocab, std::size_t max_len) {
  Dataset d;
  d.samples = std::move(samples);
  d.split = std::move(split);
  d.vocab = std::move(vocab);
  d.max_len = max_len;
  d.tokens.reserve(d.samples.size());
  for (const auto& s : d.samples) d.tokens.push_back(tokenize(d.vocab, s.report, max_len));
  return d;
}

Dataset Dataset::load(const std::filesystem::path& dir, std::size_t max_len) {
  auto loaded = load_dataset(dir);
  Vocabulary vocab;
  if (std::filesystem::exists(dir / "vocab.txt")) {
    vocab = Vocabulary::load(dir / "vocab.txt");
  } else {
    std::vector<std::string> corpus;
    for (const auto& s : loaded.samples) corpus.push_back(s.report);
    vocab = build_vocab(corpus);
  }
  return make(std::move(loaded.samples), std::move(loaded.split), std::move(vocab), max_len);
}

std::vector<std::size_t> Dataset::indices(SplitPart part) const {
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < samples.size(); ++i) by_id.emplace(samples[i].id, i);
  std::vector<std::size_t> out;
  for (const auto& id : split.part(part)) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw FormatError("split references unknown sample " + id);
    out.push_back(it->second);
  }
  return out;
}

ModelInput Dataset::input(std::size_t index) const {
  return {&samples.at(index).image, &tokens.at(index), samples.at(index).label};
}

void Dataset::check_compatible(const ModelConfig& cfg) const {
  if (cfg.vocab_size != vocab.size())
    throw ConfigMismatch("model vocab_size " + std::to_string(cfg.vocab_size) + " vs dataset vocabulary of " +
                         std::to_string(vocab.size()));
  if (cfg.max_len != max_len)
    throw ConfigMismatch("model max_len " + std::to_string(cfg.max_len) + " vs dataset tokenized at " +
                         std::to_string(max_len));
  for (const auto& s : samples) {
    if (s.image.channels != cfg.image_channels || s.image.height != cfg.image_size || s.image.width != cfg.image_size)
      throw ConfigMismatch("sample " + s.id + " image is " + std::to_string(s.image.channels) + "x" +
                           std::to_string(s.image.height) + "x" + std::to_string(s.image.width) + ", model expects " +
                           std::to_string(cfg.image_channels) + "x" + std::to_string(cfg.image_size) + "x" +
                           std::to_string(cfg.image_size));
  }
}

// ---- evaluation ---------------------------------------------------------

template <typename T>
std::vector<int> predict(const MmgcNet<T>& net, const Dataset& data, std::span<const std::size_t> indices) {
  NoGradGuard no_grad;
  std::vector<int> out;
  out.reserve(indices.size());
  for (const auto i : indices) {
    auto in = data.input(i);
    in.label = -1;
    out.push_back(net.forward(in).prediction.predicted_class());
  }
  return out;
}

template <typename T>
MetricsReport evaluate(const MmgcNet<T>& net, const Dataset& data, std::span<const std::size_t> indices,
                       Averaging averaging) {
  const auto preds = predict(net, data, indices);
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (const auto i : indices) labels.push_back(data.samples[i].label);
  return compute_metrics(ConfusionMatrix::from(preds, labels), averaging);
}

template <typename T>
MetricsReport evaluate(const Checkpoint& ckpt, const Dataset& data, SplitPart part, Averaging averaging) {
  const auto net = model_from_checkpoint<T>(ckpt);
  data.check_compatible(net.config);
  if (ckpt.metadata.contains("vocab") && !(ckpt.vocabulary() == data.vocab))
    throw ConfigMismatch("checkpoint vocabulary differs from the dataset vocabulary");
  const auto idx = data.indices(part);
  return evaluate(net, data, idx, averaging);
}

template <typename T>
double mean_loss(const MmgcNet<T>& net, const Dataset& data, std::span<const std::size_t> indices) {
  NoGradGuard no_grad;
  double total = 0;
  for (const auto i : indices) total += static_cast<double>(net.forward(data.input(i)).loss.item());
  return indices.empty() ? 0.0 : total / static_cast<double>(indices.size());
}

// ---- training -----------------------------------------------------------

namespace {

constexpr std::uint64_t kInitStream = 101;
constexpr std::uint64_t kShuffleStream = 102;

template <typename T>
std::vector<std::vector<T>> snapshot(const NamedParams<T>& params) {
  std::vector<std::vector<T>> out;
  for (const auto& [name, p] : params) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

template <typename T>
void restore(const NamedParams<T>& params, const std::vector<std::vector<T>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = Tensor<T>(params[i].second).mutable_data();
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

}  // namespace

template <typename T>
TrainResult train(const ModelConfig& cfg, const TrainConfig& tcfg, const Dataset& data, std::uint64_t seed,
                  const TrainOptions& options) {
  tcfg.validate();
  data.check_compatible(cfg);
  auto net = MmgcNet<T>::init(cfg, mix_seed(seed, 0, kInitStream));
  if (options.resume) load_parameters(net, *options.resume);

  const auto all_params = net.parameters();
  const auto params = net.trainable_parameters();
  std::vector<std::size_t> train_idx = options.train_indices ? *options.train_indices : data.indices(SplitPart::kTrain);
  if (train_idx.empty()) throw TooFewSamples("empty training set");
  const auto val_idx = data.indices(SplitPart::kVal);
  const Schedule sched = tcfg.schedule(train_idx.size());

  TrainResult result;
  result.initial_train_loss = mean_loss(net, data, train_idx);

  AdamW<T> optimizer(tcfg.adamw);
  Rng shuffle_rng(mix_seed(seed, 0, kShuffleStream));
  std::vector<std::vector<T>> best_values = snapshot(all_params);
  double best_acc = -1.0;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < train_idx.size(); begin += tcfg.batch_size) {
      const std::size_t end = std::min(begin + tcfg.batch_size, train_idx.size());
      // Backward one sample at a time: leaf grads accumulate the batch mean
      // while only a single sample's graph is alive.
      const T inv = T(1) / static_cast<T>(end - begin);
      double batch_loss = 0;
      for (std::size_t b = begin; b < end; ++b) {
        const auto loss = scale(net.forward(data.input(train_idx[b])).loss, inv);
        loss.backward();
        batch_loss += static_cast<double>(loss.item());
      }
      loss_sum += batch_loss;
      ++batches;
      ++step;
      optimizer.step(params, sched.lr_at(std::min(step, sched.total_steps)));
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val = evaluate(net, data, val_idx, tcfg.averaging);
    if (options.eval_train) rec.train = evaluate(net, data, train_idx, tcfg.averaging);
    if (rec.val.accuracy > best_acc) {
      best_acc = rec.val.accuracy;
      best_values = snapshot(all_params);
      result.best_epoch = epoch;
      result.best_val = rec.val;
    }
    result.history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
    if (options.stop_at_perfect_train && rec.train && rec.train->accuracy == 1.0) break;
  }

  restore(all_params, best_values);
  result.best = make_checkpoint(net, data.vocab,
                                {{"seed", seed},
                                 {"epoch", result.best_epoch},
                                 {"vocab_path", "vocab.txt"},
                                 {"train", to_json(tcfg)}});
  return result;
}

// ---- trials / ablation --------------------------------------------------

namespace {

// Runs fn(0..n-1) on up to `jobs` threads; rethrows the first failure in index order.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <typename T>
TrialRecord run_one_trial(const ModelConfig& cfg, const TrainConfig& tcfg, const Dataset& data, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  auto res = train<T>(cfg, tcfg, data, seed);
  TrialRecord rec;
  rec.seed = seed;
  rec.best_epoch = res.best_epoch;
  rec.val = res.best_val;
  rec.test = evaluate<T>(res.best, data, SplitPart::kTest, tcfg.averaging);
  rec.checkpoint = std::move(res.best);
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

void finalize(TrialsResult& r) {
  std::vector<MetricsReport> tests;
  for (const auto& t : r.trials) tests.push_back(t.test);
  r.test_summary = summarize(tests);
}

}  // namespace

template <typename T>
TrialsResult run_trials(const ModelConfig& cfg, const TrainConfig& tcfg, const Dataset& data, std::size_t n_trials,
                        std::uint64_t base_seed, std::size_t jobs) {
  if (n_trials == 0) throw ConfigError("n_trials must be at least 1");
  TrialsResult out;
  out.variant = cfg.variant;
  out.trials.resize(n_trials);
  parallel_for(n_trials, jobs, [&](std::size_t i) { out.trials[i] = run_one_trial<T>(cfg, tcfg, data, base_seed + i); });
  finalize(out);
  return out;
}

template <typename T>
AblationResult run_ablation(const ModelConfig& base, const TrainConfig& tcfg, const Dataset& data,
                            std::size_t n_trials, std::uint64_t base_seed, std::size_t jobs) {
  if (n_trials == 0) throw ConfigError("n_trials must be at least 1");
  const std::vector<Variant> variants{Variant::kM1, Variant::kM2, Variant::kM3};
  AblationResult out;
  out.rows.resize(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v) {
    out.rows[v].variant = variants[v];
    out.rows[v].trials.resize(n_trials);
  }
  // The m3 runs are the slowest; queue them first so parallel workers balance.
  std::vector<std::pair<std::size_t, std::size_t>> work;
  for (const std::size_t v : {2u, 0u, 1u})
    for (std::size_t t = 0; t < n_trials; ++t) work.emplace_back(v, t);
  parallel_for(work.size(), jobs, [&](std::size_t w) {
    const auto [v, t] = work[w];
    ModelConfig cfg = base;
    cfg.variant = variants[v];
    out.rows[v].trials[t] = run_one_trial<T>(cfg, tcfg, data, base_seed + t);
  });
  for (auto& row : out.rows) finalize(row);
  return out;
}

// ---- writers ------------------------------------------------------------

namespace {

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string upper_variant(Variant v) {
  auto s = variant_name(v);
  s[0] = 'M';
  return s;
}

}  // namespace

nlohmann::ordered_json trials_json(const TrialsResult& r) {
  nlohmann::ordered_json j;
  j["variant"] = variant_name(r.variant);
  j["trials"] = nlohmann::ordered_json::array();
  for (const auto& t : r.trials)
    j["trials"].push_back({{"seed", t.seed}, {"best_epoch", t.best_epoch}, {"val", to_json(t.val)}, {"test", to_json(t.test)}});
  j["test_summary"] = to_json(r.test_summary);
  return j;
}

nlohmann::ordered_json ablation_json(const AblationResult& r) {
  nlohmann::ordered_json j;
  j["table"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    const auto& m = row.test_summary.mean;
    const auto& s = row.test_summary.std;
    nlohmann::ordered_json metrics;
    metrics["accuracy_mean"] = m.accuracy;
    metrics["accuracy_std"] = s.accuracy;
    metrics["precision_mean"] = m.precision;
    metrics["precision_std"] = s.precision;
    metrics["recall_mean"] = m.recall;
    metrics["recall_std"] = s.recall;
    metrics["f1_mean"] = m.f1;
    metrics["f1_std"] = s.f1;
    j["table"].push_back({{"variant", upper_variant(row.variant)}, {"metrics", metrics}});
  }
  j["details"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) j["details"].push_back(trials_json(row));
  return j;
}

std::string ablation_table_csv(const AblationResult& r) {
  std::ostringstream os;
  os << "variant,accuracy_mean,accuracy_std,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std\r\n";
  for (const auto& row : r.rows) {
    const auto& m = row.test_summary.mean;
    const auto& s = row.test_summary.std;
    os << upper_variant(row.variant) << ',' << num(m.accuracy) << ',' << num(s.accuracy) << ',' << num(m.precision)
       << ',' << num(s.precision) << ',' << num(m.recall) << ',' << num(s.recall) << ',' << num(m.f1) << ','
       << num(s.f1) << "\r\n";
  }
  return os.str();
}

std::string trials_csv(const std::vector<TrialsResult>& rows) {
  std::ostringstream os;
  os << "variant,row,seed,accuracy,precision,recall,f1,recall_vcd,recall_gc\r\n";
  auto line = [&](const TrialsResult& r, const std::string& kind, const std::string& seed, const MetricsReport& m) {
    os << upper_variant(r.variant) << ',' << kind << ',' << seed << ',' << num(m.accuracy) << ',' << num(m.precision)
       << ',' << num(m.recall) << ',' << num(m.f1) << ',' << num(m.recall_vcd) << ',' << num(m.recall_gc) << "\r\n";
  };
  for (const auto& r : rows) {
    for (const auto& t : r.trials) line(r, "trial", std::to_string(t.seed), t.test);
    line(r, "mean", "", r.test_summary.mean);
    line(r, "std", "", r.test_summary.std);
  }
  return os.str();
}

nlohmann::ordered_json history_json(const TrainResult& r) {
  nlohmann::ordered_json j;
  j["best_epoch"] = r.best_epoch;
  j["best_val"] = to_json(r.best_val);
  j["initial_train_loss"] = r.initial_train_loss;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : r.history) {
    nlohmann::ordered_json rec{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val", to_json(e.val)}};
    if (e.train) rec["train"] = to_json(*e.train);
    j["epochs"].push_back(rec);
  }
  return j;
}

#define MMGC_INSTANTIATE(T)                                                                                         \
  template TrainResult train<T>(const ModelConfig&, const TrainConfig&, const Dataset&, std::uint64_t,               \
                                const TrainOptions&);                                                               \
  template std::vector<int> predict<T>(const MmgcNet<T>&, const Dataset&, std::span<const std::size_t>);            \
  template MetricsReport evaluate<T>(const MmgcNet<T>&, const Dataset&, std::span<const std::size_t>, Averaging);   \
  template MetricsReport evaluate<T>(const Checkpoint&, const Dataset&, SplitPart, Averaging);                      \
  template double mean_loss<T>(const MmgcNet<T>&, const Dataset&, std::span<const std::size_t>);                    \
  template TrialsResult run_trials<T>(const ModelConfig&, const TrainConfig&, const Dataset&, std::size_t,          \
                                      std::uint64_t, std::size_t);                                                  \
  template AblationResult run_ablation<T>(const ModelConfig&, const TrainConfig&, const Dataset&, std::size_t,      \
                                          std::uint64_t, std::size_t);

MMGC_INSTANTIATE(float)
MMGC_INSTANTIATE(double)

#undef MMGC_INSTANTIATE

}  // namespace mmgc
