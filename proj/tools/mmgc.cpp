// mmgc: generate data, train, evaluate, ablate and gradient-check the
// fusion classifier. Exit codes: 0 ok, 1 usage, 2 data/format, 3 numeric.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmgc/checkpoint.hpp"
#include "mmgc/errors.hpp"
#include "mmgc/gradcheck_suite.hpp"
#include "mmgc/run_config.hpp"
#include "mmgc/synth_data.hpp"
#include "mmgc/train.hpp"

namespace fs = std::filesystem;
using namespace mmgc;

namespace {

bool use_f64() {
  const char* p = std::getenv("MMGC_PRECISION");
  if (!p || std::string(p).empty() || std::string(p) == "f32") return false;
  if (std::string(p) == "f64") return true;
  throw ConfigError(std::string("MMGC_PRECISION must be f32 or f64, got '") + p + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// Config file first, then individual flags, then --set pairs.
struct Overrides {
  std::string config_file;
  std::vector<std::pair<std::string, std::optional<std::string>*>> flags;
  std::vector<std::string> sets;

  void flag(CLI::App* cmd, const std::string& opt, const std::string& key, std::optional<std::string>& slot,
            const std::string& help) {
    cmd->add_option(opt, slot, help);
    flags.emplace_back(key, &slot);
  }

  RunConfig resolve() const {
    RunConfig cfg = config_file.empty() ? RunConfig{} : load_run_config(config_file);
    for (const auto& [key, slot] : flags)
      if (slot->has_value()) set_config_value(cfg, key, **slot);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
      set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
  }
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_file, "key = value run configuration file");
  cmd->add_option("--set", o.sets, "override one config key (KEY=VALUE, repeatable)");
}

ModelConfig model_for(const RunConfig& cfg, const Dataset& data) {
  ModelConfig m = cfg.model;
  m.vocab_size = data.vocab.size();
  m.validate();
  return m;
}

// ---- gen-data -----------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, const fs::path& out) {
  GenParams gp = cfg.gen;
  gp.seed = cfg.seed;
  gp.validate();
  const auto samples = generate(gp);
  std::vector<std::string> ids, reports;
  for (const auto& s : samples) {
    ids.push_back(s.id);
    reports.push_back(s.report);
  }
  const auto parts = split(ids, cfg.split_seed);
  make_dir(out);
  save_dataset(samples, parts, out);
  build_vocab(reports).save(out / "vocab.txt");
  write_text(out / "config.txt", to_text(cfg));

  std::printf("wrote %zu samples to %s (train %zu, val %zu, test %zu)\n", samples.size(), out.string().c_str(),
              parts.train.size(), parts.val.size(), parts.test.size());
  if (gp.sigma > 0.1) {
    std::printf("bayes accuracy unavailable: sigma %.3g > 0.1\n", gp.sigma);
  } else {
    std::printf("bayes image %.2f\n", bayes_accuracy(gp, Modality::kImage));
    std::printf("bayes text %.2f\n", bayes_accuracy(gp, Modality::kText));
    std::printf("bayes fused %.2f\n", bayes_accuracy(gp, Modality::kFused));
  }
  return 0;
}

// ---- train --------------------------------------------------------------

template <typename T>
int cmd_train(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out, const std::string& resume) {
  const auto data = Dataset::load(data_dir, cfg.model.max_len);
  const auto model = model_for(cfg, data);
  std::optional<Checkpoint> start;
  TrainOptions opts;
  if (!resume.empty()) {
    start = load_checkpoint(resume);
    opts.resume = &*start;
  }
  opts.on_epoch = [](const EpochRecord& r) {
    std::fprintf(stderr, "epoch %zu  loss %.5f  val_acc %.4f\n", r.epoch, r.train_loss, r.val.accuracy);
  };
  const auto result = train<T>(model, cfg.train, data, cfg.seed, opts);
  const auto test = evaluate<T>(result.best, data, SplitPart::kTest, cfg.train.averaging);

  make_dir(out);
  save_checkpoint(result.best, out / "checkpoint.mmgc");
  nlohmann::ordered_json metrics;
  metrics["variant"] = variant_name(model.variant);
  metrics["seed"] = cfg.seed;
  metrics["precision"] = sizeof(T) == 8 ? "f64" : "f32";
  metrics["model"] = to_json(model);
  metrics["train"] = to_json(cfg.train);
  metrics["history"] = history_json(result);
  metrics["best_epoch"] = result.best_epoch;
  metrics["val"] = to_json(result.best_val);
  metrics["test"] = to_json(test);
  write_text(out / "metrics.json", metrics.dump(2) + "\n");
  write_text(out / "config.txt", to_text(cfg));
  std::printf("best epoch %zu  val_acc %.4f  test_acc %.4f\n", result.best_epoch, result.best_val.accuracy,
              test.accuracy);
  return 0;
}

// ---- eval ---------------------------------------------------------------

template <typename T>
int cmd_eval(const fs::path& ckpt_path, const fs::path& data_dir, SplitPart part, std::optional<Averaging> averaging) {
  const auto ckpt = load_checkpoint(ckpt_path);
  const auto model = ckpt.config();
  Averaging avg = averaging.value_or(Averaging::kMacro);
  if (!averaging && ckpt.metadata.contains("train") && ckpt.metadata["train"].contains("averaging"))
    avg = parse_averaging(ckpt.metadata["train"]["averaging"].get<std::string>());
  const auto data = Dataset::load(data_dir, model.max_len);
  const auto report = evaluate<T>(ckpt, data, part, avg);
  std::cout << to_json(report).dump(2) << "\n";
  return 0;
}

// ---- ablate -------------------------------------------------------------

template <typename T>
int cmd_ablate(const RunConfig& cfg, const fs::path& data_dir, const std::string& out) {
  const auto data = Dataset::load(data_dir, cfg.model.max_len);
  const auto model = model_for(cfg, data);
  const auto result = run_ablation<T>(model, cfg.train, data, cfg.trials, cfg.seed, cfg.jobs);
  const std::string table = ablation_table_csv(result);
  if (!out.empty()) {
    make_dir(out);
    write_text(fs::path(out) / "ablation.json", ablation_json(result).dump(2) + "\n");
    write_text(fs::path(out) / "ablation.csv", table);
    write_text(fs::path(out) / "trials.csv", trials_csv(result.rows));
    write_text(fs::path(out) / "config.txt", to_text(cfg));
  }
  std::cout << table;
  return 0;
}

// ---- gradcheck ----------------------------------------------------------

int cmd_gradcheck(const GradcheckSuiteOptions& opts) {
  const auto checks = run_gradcheck_suite(opts);
  std::vector<std::string> failed;
  double total = 0;
  std::printf("%-18s %14s %8s %8s\n", "component", "max_rel_error", "coords", "status");
  for (const auto& c : checks) {
    std::printf("%-18s %14.3e %8zu %8s\n", c.name.c_str(), c.max_rel_error, c.checked, c.passed ? "ok" : "FAIL");
    total += c.seconds;
    if (!c.passed) failed.push_back(c.name);
  }
  std::printf("%zu components, tolerance %.0e, %.2f s\n", checks.size(), opts.tolerance, total);
  if (failed.empty()) return 0;
  std::string names;
  for (const auto& n : failed) names += (names.empty() ? "" : ", ") + n;
  std::fprintf(stderr, "gradcheck failed: %s\n", names.c_str());
  return 3;
}

int cmd_schema() {
  for (const auto& k : config_schema())
    std::printf("%-18s = %-10s # %s\n", k.name.c_str(), k.default_value.c_str(), k.description.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal glottic-carcinoma classifier: data, training, evaluation, verification"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic paired image/report dataset");
  Overrides gen_o;
  std::string gen_out;
  std::optional<std::string> g_n, g_aimg, g_atxt, g_sigma, g_seed, g_split, g_pgc;
  gen->add_option("--out", gen_out, "output directory")->required();
  add_common(gen, gen_o);
  gen_o.flag(gen, "--n", "n_samples", g_n, "number of samples");
  gen_o.flag(gen, "--a-img", "a_img", g_aimg, "fraction of class-uninformative images");
  gen_o.flag(gen, "--a-txt", "a_txt", g_atxt, "fraction of class-uninformative reports");
  gen_o.flag(gen, "--sigma", "sigma", g_sigma, "pixel noise std");
  gen_o.flag(gen, "--p-gc", "p_gc", g_pgc, "GC class prior");
  gen_o.flag(gen, "--seed", "seed", g_seed, "generator seed");
  gen_o.flag(gen, "--split-seed", "split_seed", g_split, "train/val/test shuffle seed");

  // train
  auto* tr = app.add_subcommand("train", "train one variant and save its best checkpoint");
  Overrides tr_o;
  std::string tr_data, tr_out, tr_resume;
  std::optional<std::string> t_variant, t_seed, t_epochs, t_lr, t_batch;
  bool t_paper_lr = false;
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--resume", tr_resume, "start from this checkpoint's parameters");
  tr->add_flag("--paper-lr", t_paper_lr, "pin the peak learning rate to 1e-5");
  add_common(tr, tr_o);
  tr_o.flag(tr, "--variant", "variant", t_variant, "m1 | m2 | m3");
  tr_o.flag(tr, "--seed", "seed", t_seed, "trial seed");
  tr_o.flag(tr, "--epochs", "epochs", t_epochs, "training epochs");
  tr_o.flag(tr, "--lr", "lr", t_lr, "peak learning rate");
  tr_o.flag(tr, "--batch-size", "batch_size", t_batch, "minibatch size");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_avg;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--split", ev_split, "train | val | test");
  ev->add_option("--averaging", ev_avg, "macro | micro | weighted (default: as trained)");

  // ablate
  auto* ab = app.add_subcommand("ablate", "train m1, m2 and m3 over several seeds and tabulate test metrics");
  Overrides ab_o;
  std::string ab_data, ab_out;
  std::optional<std::string> a_trials, a_seed, a_jobs, a_epochs;
  bool a_paper_lr = false;
  ab->add_option("--data", ab_data, "dataset directory")->required();
  ab->add_option("--out", ab_out, "directory for ablation.json, ablation.csv, trials.csv");
  ab->add_flag("--paper-lr", a_paper_lr, "pin the peak learning rate to 1e-5");
  add_common(ab, ab_o);
  ab_o.flag(ab, "--trials", "trials", a_trials, "seeds per variant");
  ab_o.flag(ab, "--seed", "seed", a_seed, "first trial seed");
  ab_o.flag(ab, "--jobs", "jobs", a_jobs, "concurrent trainings");
  ab_o.flag(ab, "--epochs", "epochs", a_epochs, "training epochs");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "64-bit finite-difference check of every block and full forward");
  GradcheckSuiteOptions gc_opts;
  gc->add_option("--seed", gc_opts.seed, "seed for the random inputs");
  gc->add_option("--sabotage", gc_opts.sabotage, "negate one component's backward")->group("");

  auto* schema = app.add_subcommand("schema", "print every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(gen_o.resolve(), gen_out);
    if (*tr) {
      auto cfg = tr_o.resolve();
      if (t_paper_lr) cfg.train.paper_lr = true;
      return use_f64() ? cmd_train<double>(cfg, tr_data, tr_out, tr_resume)
                       : cmd_train<float>(cfg, tr_data, tr_out, tr_resume);
    }
    if (*ev) {
      SplitPart part;
      try {
        part = parse_split_part(ev_split);
      } catch (const FormatError&) {
        throw ConfigError("--split must be train, val or test, got '" + ev_split + "'");
      }
      std::optional<Averaging> avg;
      if (!ev_avg.empty()) avg = parse_averaging(ev_avg);
      return use_f64() ? cmd_eval<double>(ev_ckpt, ev_data, part, avg) : cmd_eval<float>(ev_ckpt, ev_data, part, avg);
    }
    if (*ab) {
      auto cfg = ab_o.resolve();
      if (a_paper_lr) cfg.train.paper_lr = true;
      return use_f64() ? cmd_ablate<double>(cfg, ab_data, ab_out) : cmd_ablate<float>(cfg, ab_data, ab_out);
    }
    if (*gc) return cmd_gradcheck(gc_opts);
    if (*schema) return cmd_schema();
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
