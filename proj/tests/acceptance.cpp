// Acceptance run: one PASS/FAIL line per criterion, then a summary. The
// default ablation makes this take roughly half an hour on one core.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mmgc/checkpoint.hpp"
#include "mmgc/gradcheck_suite.hpp"
#include "mmgc/metrics.hpp"
#include "mmgc/optim.hpp"
#include "mmgc/train.hpp"

using namespace mmgc;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Outcome> g_outcomes;
fs::path g_work;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  g_outcomes.push_back({id, name, pass, detail});
  std::printf("%s [%d] %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

// Runs one criterion; an escaping exception counts as a failure.
void criterion(int id, const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Dataset default_dataset() {
  const GenParams gp;  // n=2000, a_img=a_txt=0.3, sigma=0.05, seed 0
  auto samples = generate(gp);
  std::vector<std::string> ids, reports;
  for (const auto& s : samples) {
    ids.push_back(s.id);
    reports.push_back(s.report);
  }
  auto sp = split(ids, 1234);
  auto vocab = build_vocab(reports);
  return Dataset::make(std::move(samples), std::move(sp), std::move(vocab), ModelConfig{}.max_len);
}

ModelConfig default_model(const Dataset& data, Variant v) {
  ModelConfig m;
  m.vocab_size = data.vocab.size();
  m.variant = v;
  return m;
}

// ---- 1 -------------------------------------------------------------------

void gradient_correctness() {
  const auto t0 = Clock::now();
  const auto checks = run_gradcheck_suite();
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string worst_name, failed;
  for (const auto& c : checks) {
    if (c.max_rel_error >= worst) worst = c.max_rel_error, worst_name = c.name;
    if (!c.passed) failed += " " + c.name;
  }
  const bool pass = failed.empty() && worst <= 1e-5 && secs < 120.0;
  report(1, "gradient correctness", pass,
         fmt("%zu components, max rel err %.3g (%s), %.1f s%s", checks.size(), worst, worst_name.c_str(), secs,
             failed.empty() ? "" : (" failed:" + failed).c_str()));
}

// ---- 2, 3 ----------------------------------------------------------------

// Greedy list scheduling of the trials, in queue order, on `workers` cores.
double simulated_makespan(const AblationResult& r, std::size_t workers) {
  std::vector<double> jobs;
  for (const int row : {2, 0, 1})
    for (const auto& t : r.rows[static_cast<std::size_t>(row)].trials) jobs.push_back(t.seconds);
  std::vector<double> free_at(workers, 0.0);
  for (double j : jobs) *std::min_element(free_at.begin(), free_at.end()) += j;
  return *std::max_element(free_at.begin(), free_at.end());
}

void fusion_dominance(const AblationResult& r, double wall) {
  const double m1 = r.rows[0].test_summary.mean.accuracy;
  const double m2 = r.rows[1].test_summary.mean.accuracy;
  const double m3 = r.rows[2].test_summary.mean.accuracy;
  const double gap = m3 - std::max(m1, m2);
  const double makespan = simulated_makespan(r, 4);
  const bool bands = m3 >= 0.93 && m1 <= 0.88 && m2 <= 0.88 && gap >= 0.05;
  const bool fast = makespan <= 1800.0;
  report(2, "fusion dominance", bands && fast,
         fmt("M1 %.4f  M2 %.4f  M3 %.4f  gap %.4f; serial %.0f s, simulated 4-core makespan %.0f s (limit 1800)", m1,
             m2, m3, gap, wall, makespan));
}

std::vector<float> logits_of(const MmgcNet<float>& net, const ModelInput& in) {
  const auto out = net.forward(in).prediction.logits;
  return {out.data().begin(), out.data().end()};
}

void single_modality_invariance(const AblationResult& r, const Dataset& data) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<float> pixel(0.f, 1.f);
  std::uniform_int_distribution<int> token(0, static_cast<int>(data.vocab.size()) - 1);
  std::uniform_int_distribution<std::size_t> length(1, data.max_len);
  const auto test = data.indices(SplitPart::kTest);
  std::size_t compared = 0, differing = 0;
  NoGradGuard no_grad;
  for (const int row : {0, 1}) {
    for (const auto& trial : r.rows[static_cast<std::size_t>(row)].trials) {
      const auto net = model_from_checkpoint<float>(trial.checkpoint);
      for (const auto i : test) {
        ModelInput in = data.input(i);
        const auto clean = logits_of(net, in);
        Image noise_img = *in.image;
        for (auto& p : noise_img.pixels) p = pixel(rng);
        TokenSequence noise_tok;
        noise_tok.ids.assign(data.max_len, Vocabulary::kPad);
        noise_tok.length = length(rng);
        for (std::size_t k = 0; k < noise_tok.length; ++k) noise_tok.ids[k] = token(rng);
        if (row == 0) in.tokens = &noise_tok;
        else in.image = &noise_img;
        const auto noisy = logits_of(net, in);
        ++compared;
        differing += std::memcmp(clean.data(), noisy.data(), clean.size() * sizeof(float)) != 0;
      }
    }
  }
  report(3, "single-modality invariance", differing == 0 && compared > 0,
         fmt("%zu test predictions over 5 m1 + 5 m2 checkpoints, %zu with any logit bit changed", compared, differing));
}

// ---- 4 -------------------------------------------------------------------

void normalization_invariants(const Dataset& data) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<float> pixel(0.f, 1.f);
  std::uniform_int_distribution<int> token(0, static_cast<int>(data.vocab.size()) - 1);
  std::uniform_int_distribution<std::size_t> length(1, data.max_len);
  double worst_v = 0, worst_t = 0, worst_g = 0, worst_y = 0;
  std::size_t passes = 0;
  NoGradGuard no_grad;
  auto sq = [](const Tensor<float>& x) {
    double s = 0;
    for (float v : x.data()) s += static_cast<double>(v) * v;
    return s;
  };
  // 10^4 passes through m3 plus 10^3 through each single-modality variant.
  for (const auto& [variant, count] : std::vector<std::pair<Variant, std::size_t>>{
           {Variant::kM3, 10000}, {Variant::kM1, 1000}, {Variant::kM2, 1000}}) {
    const std::size_t per_model = 1000;
    for (std::size_t m = 0; m < count / per_model; ++m) {
      const auto net = MmgcNet<float>::init(default_model(data, variant), 1000 + m);
      for (std::size_t k = 0; k < per_model; ++k) {
        Image img{1, 32, 32, std::vector<float>(32 * 32)};
        for (auto& p : img.pixels) p = pixel(rng);
        TokenSequence tok;
        tok.ids.assign(data.max_len, Vocabulary::kPad);
        tok.length = length(rng);
        for (std::size_t i = 0; i < tok.length; ++i) tok.ids[i] = token(rng);
        const auto out = net.forward(ModelInput{&img, &tok, -1});
        if (out.v_norm) worst_v = std::max(worst_v, std::abs(std::sqrt(sq(*out.v_norm)) - 1.0));
        if (out.t_norm) worst_t = std::max(worst_t, std::abs(std::sqrt(sq(*out.t_norm)) - 1.0));
        if (variant == Variant::kM3) worst_g = std::max(worst_g, std::abs(sq(out.joint.g) - 2.0));
        double total = 0;
        for (float p : out.prediction.probs.data()) total += p;
        worst_y = std::max(worst_y, std::abs(total - 1.0));
        ++passes;
      }
    }
  }
  const bool pass = worst_v <= 1e-5 && worst_t <= 1e-5 && worst_g <= 1e-4 && worst_y <= 1e-6;
  report(4, "normalization invariants", pass,
         fmt("%zu passes: max |‖v‖-1| %.2g, |‖t‖-1| %.2g, |‖g‖²-2| %.2g, |Σŷ-1| %.2g", passes, worst_v, worst_t, worst_g,
             worst_y));
}

// ---- 5 -------------------------------------------------------------------

void metrics_oracle() {
  std::mt19937_64 rng(5);
  std::size_t mismatches = 0, degenerate = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    const int mode = trial % 5;  // 1: no GC support, 2: no GC predictions, 3: no VCD support, 4: no VCD predictions
    std::vector<int> pred(n), label(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = mode == 2 ? 0 : mode == 4 ? 1 : static_cast<int>(rng() % 2);
      label[i] = mode == 1 ? 0 : mode == 3 ? 1 : static_cast<int>(rng() % 2);
    }
    // Brute force: per-class counts straight from the lists.
    double correct = 0, tp[2] = {0, 0}, npred[2] = {0, 0}, nlabel[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      correct += pred[i] == label[i];
      npred[pred[i]] += 1;
      nlabel[label[i]] += 1;
      tp[label[i]] += pred[i] == label[i];
    }
    degenerate += npred[0] == 0 || npred[1] == 0 || nlabel[0] == 0 || nlabel[1] == 0;
    double p[2], rc[2], f[2];
    for (int k = 0; k < 2; ++k) {
      p[k] = npred[k] == 0 ? 0.0 : tp[k] / npred[k];
      rc[k] = nlabel[k] == 0 ? 0.0 : tp[k] / nlabel[k];
      f[k] = p[k] + rc[k] == 0 ? 0.0 : 2.0 * p[k] * rc[k] / (p[k] + rc[k]);
    }
    const MetricsReport oracle{correct / static_cast<double>(n), (p[0] + p[1]) / 2, (rc[0] + rc[1]) / 2,
                               (f[0] + f[1]) / 2, rc[0], rc[1]};
    mismatches += !(compute_metrics(ConfusionMatrix::from(pred, label)) == oracle);
  }
  report(5, "metrics oracle equivalence", mismatches == 0,
         fmt("1000 random sets (%zu with a degenerate class), %zu mismatches", degenerate, mismatches));
}

// ---- 6 -------------------------------------------------------------------

void capacity(const Dataset& data) {
  auto train_idx = data.indices(SplitPart::kTrain);
  train_idx.resize(32);
  TrainConfig tcfg;
  tcfg.epochs = 200;
  TrainOptions opts;
  opts.train_indices = train_idx;
  opts.eval_train = true;
  opts.stop_at_perfect_train = true;
  std::string detail;
  bool pass = true;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto r = train<float>(default_model(data, Variant::kM3), tcfg, data, seed, opts);
    const auto& last = r.history.back();
    const bool perfect = last.train && last.train->accuracy == 1.0;
    pass = pass && perfect;
    detail += fmt("%sseed %llu: train acc %.4f after %zu epochs", seed ? "; " : "", static_cast<unsigned long long>(seed),
                  last.train ? last.train->accuracy : 0.0, last.epoch);
  }
  report(6, "capacity (32 samples, 200 epochs)", pass, detail);
}

// ---- 7 -------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename E, typename F>
bool throws(F&& f) {
  try {
    f();
  } catch (const E&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

void determinism_and_persistence(const Dataset& full) {
  std::vector<std::string> problems;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };

  // identical (config, data, seed) -> identical metrics JSON
  auto small_ids = full.split;
  small_ids.train.resize(160);
  auto data = Dataset::make(full.samples, small_ids, full.vocab, full.max_len);
  TrainConfig tcfg;
  tcfg.epochs = 2;
  const auto cfg = default_model(full, Variant::kM3);
  auto metrics_json = [&] {
    const auto r = train<float>(cfg, tcfg, data, 11);
    auto j = history_json(r);
    j["test"] = to_json(evaluate<float>(r.best, data, SplitPart::kTest));
    return j.dump();
  };
  const auto first = metrics_json();
  expect(first == metrics_json(), "metrics JSON differs between identical runs");

  // dataset round trip
  const auto ddir = g_work / "dataset";
  fs::remove_all(ddir);
  save_dataset(full.samples, full.split, ddir);
  const auto loaded = load_dataset(ddir);
  expect(loaded.samples == full.samples && loaded.split == full.split, "dataset round trip not exact");
  const auto ddir2 = g_work / "dataset2";
  fs::remove_all(ddir2);
  save_dataset(loaded.samples, loaded.split, ddir2);
  expect(slurp(ddir / "manifest.jsonl") == slurp(ddir2 / "manifest.jsonl"), "manifest not byte-identical on re-save");
  const auto first_img = "images/" + full.samples.front().id + ".mmgi";
  expect(slurp(ddir / first_img) == slurp(ddir2 / first_img), "image file not byte-identical on re-save");

  // checkpoint round trip
  const auto net = MmgcNet<float>::init(cfg, 5);
  const auto ckpt = make_checkpoint(net, full.vocab, {{"seed", 5}});
  const auto cpath = g_work / "model.mmgc";
  save_checkpoint(ckpt, cpath);
  const auto back = load_checkpoint(cpath);
  expect(back == ckpt, "checkpoint round trip not exact");
  save_checkpoint(back, g_work / "model2.mmgc");
  expect(slurp(cpath) == slurp(g_work / "model2.mmgc"), "checkpoint not byte-identical on re-save");
  const auto rebuilt = model_from_checkpoint<float>(back);
  const auto a = net.parameters(), b = rebuilt.parameters();
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i)
    same = std::equal(a[i].second.data().begin(), a[i].second.data().end(), b[i].second.data().begin());
  expect(same, "rebuilt model parameters differ");

  // corruption
  const auto size = fs::file_size(cpath);
  std::size_t cuts = 0;
  for (std::uintmax_t cut = 0; cut < size; cut += std::max<std::uintmax_t>(1, size / 97)) {
    fs::copy_file(cpath, g_work / "cut.mmgc", fs::copy_options::overwrite_existing);
    fs::resize_file(g_work / "cut.mmgc", cut);
    expect(throws<FormatError>([&] { load_checkpoint(g_work / "cut.mmgc"); }), fmt("truncation at %ju accepted", cut));
    ++cuts;
  }
  fs::copy_file(ddir / first_img, g_work / "bad.mmgi", fs::copy_options::overwrite_existing);
  {
    std::fstream f(g_work / "bad.mmgi", std::ios::in | std::ios::out | std::ios::binary);
    f.write("JUNK", 4);
  }
  expect(throws<FormatError>([&] { read_image_file(g_work / "bad.mmgi"); }), "bad image magic accepted");
  {
    std::ofstream f(ddir / "manifest.jsonl", std::ios::app);
    f << "{not json\n";
  }
  expect(throws<FormatError>([&] { load_dataset(ddir); }), "corrupt manifest accepted");

  // CLI: truncated checkpoint -> exit 2, nothing on stdout
  fs::copy_file(cpath, g_work / "cut.mmgc", fs::copy_options::overwrite_existing);
  fs::resize_file(g_work / "cut.mmgc", size / 2);
  const auto out = g_work / "cli_out.txt";
  const std::string cmd = std::string(MMGC_CLI) + " eval --checkpoint " + (g_work / "cut.mmgc").string() + " --data " +
                          ddir2.string() + " > " + out.string() + " 2> /dev/null";
  const int status = std::system(cmd.c_str());
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  expect(code == 2, fmt("CLI exit %d on truncated checkpoint", code));
  expect(slurp(out).empty(), "CLI printed output for a truncated checkpoint");

  std::string detail = fmt("metrics JSON stable, round trips exact, %zu truncations rejected", cuts);
  if (!problems.empty()) {
    detail = problems.front();
    for (std::size_t i = 1; i < problems.size() && i < 4; ++i) detail += "; " + problems[i];
  }
  report(7, "determinism and persistence", problems.empty(), detail);
}

// ---- 8 -------------------------------------------------------------------

void unit_anchors() {
  TrainConfig pinned;
  pinned.paper_lr = true;
  const auto sched = pinned.schedule(1600);
  const double lr = sched.lr_at(sched.warmup_steps);

  auto w = Tensor<double>::from({1}, {1.0}, true);
  AdamW<double> opt({0.9, 0.999, 1e-8, 0.01});
  w.node()->grad = {0.5};
  opt.step({{"w", w}}, 0.1);

  const double ce = cross_entropy_logits(Tensor<double>::from({2}, {0.3, 0.3}), 1).item();
  const bool pass = lr == 1e-5 && std::abs(w.at(0) - 0.899) <= 1e-6 && std::abs(ce - std::log(2.0)) <= 1e-6;
  report(8, "schedule/optimizer anchors", pass,
         fmt("lr_at(warmup) %.3g, AdamW step %.9f, CE(uniform) - ln2 = %.2g", lr, w.at(0), ce - std::log(2.0)));
}

}  // namespace

int main(int argc, char** argv) {
  g_work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "mmgc_acceptance";
  fs::create_directories(g_work);
  const auto t0 = Clock::now();

  criterion(8, "schedule/optimizer anchors", unit_anchors);
  criterion(5, "metrics oracle equivalence", metrics_oracle);
  criterion(1, "gradient correctness", gradient_correctness);
  const Dataset data = default_dataset();
  criterion(4, "normalization invariants", [&] { normalization_invariants(data); });
  criterion(7, "determinism and persistence", [&] { determinism_and_persistence(data); });
  criterion(6, "capacity (32 samples, 200 epochs)", [&] { capacity(data); });

  AblationResult ablation;
  bool have_ablation = false;
  criterion(2, "fusion dominance", [&] {
    const auto start = Clock::now();
    ablation = run_ablation<float>(default_model(data, Variant::kM3), TrainConfig{}, data, 5, 0, 1);
    const double wall = seconds_since(start);
    have_ablation = true;
    std::ofstream(g_work / "ablation.json") << ablation_json(ablation).dump(2) << "\n";
    std::ofstream(g_work / "ablation.csv", std::ios::binary) << ablation_table_csv(ablation);
    std::ofstream(g_work / "trials.csv", std::ios::binary) << trials_csv(ablation.rows);
    fusion_dominance(ablation, wall);
  });
  if (have_ablation) {
    criterion(3, "single-modality invariance", [&] { single_modality_invariance(ablation, data); });
  } else {
    report(3, "single-modality invariance", false, "no trained checkpoints (ablation failed)");
  }

  std::sort(g_outcomes.begin(), g_outcomes.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
  std::size_t passed = 0;
  std::printf("\nsummary (%.0f s)\n", seconds_since(t0));
  for (const auto& o : g_outcomes) {
    passed += o.pass;
    std::printf("  %s [%d] %s\n", o.pass ? "PASS" : "FAIL", o.id, o.name.c_str());
  }
  std::printf("%zu/%zu criteria passed\n", passed, g_outcomes.size());
  return passed == g_outcomes.size() ? 0 : 1;
}
