#include "mmgc/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "mmgc/errors.hpp"

namespace mmgc {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  const auto* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (value.empty() || res.ec != std::errc() || res.ptr != end)
    throw ConfigError("key '" + key + "': cannot parse '" + value + "' as a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + value + "'");
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct Entry {
  const char* name;
  const char* description;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Members are reached through small lambdas so one table covers the nested
// model/train/gen structs.
#define MMGC_SIZE(NAME, EXPR, DOC)                                                                          \
  Entry {                                                                                                    \
    NAME, DOC, [](RunConfig& c, const std::string& k, const std::string& v) {                                \
      c.EXPR = parse_number<std::size_t>(k, v);                                                              \
    },                                                                                                       \
        [](const RunConfig& c) { return std::to_string(c.EXPR); }                                            \
  }
#define MMGC_U64(NAME, EXPR, DOC)                                                                           \
  Entry {                                                                                                    \
    NAME, DOC, [](RunConfig& c, const std::string& k, const std::string& v) {                                \
      c.EXPR = parse_number<std::uint64_t>(k, v);                                                            \
    },                                                                                                       \
        [](const RunConfig& c) { return std::to_string(c.EXPR); }                                            \
  }
#define MMGC_REAL(NAME, EXPR, DOC)                                                                          \
  Entry {                                                                                                    \
    NAME, DOC, [](RunConfig& c, const std::string& k, const std::string& v) {                                \
      c.EXPR = parse_number<double>(k, v);                                                                   \
    },                                                                                                       \
        [](const RunConfig& c) { return fmt(c.EXPR); }                                                       \
  }
#define MMGC_BOOL(NAME, EXPR, DOC)                                                                          \
  Entry {                                                                                                    \
    NAME, DOC, [](RunConfig& c, const std::string& k, const std::string& v) { c.EXPR = parse_bool(k, v); }, \
        [](const RunConfig& c) { return std::string(c.EXPR ? "true" : "false"); }                           \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table{
      // data generation
      MMGC_SIZE("n_samples", gen.n_samples, "number of generated image/report pairs"),
      MMGC_REAL("p_gc", gen.p_gc, "prior probability of the GC class"),
      MMGC_REAL("a_img", gen.a_img, "fraction of samples whose image carries no class information"),
      MMGC_REAL("a_txt", gen.a_txt, "fraction of samples whose report carries no class information"),
      MMGC_REAL("sigma", gen.sigma, "std of Gaussian pixel noise"),
      MMGC_U64("split_seed", split_seed, "seed of the train/val/test shuffle"),
      // shared image geometry
      Entry{"image_size", "square image side in pixels (generator and encoder)",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.gen.image_size = c.model.image_size = parse_number<std::size_t>(k, v);
            },
            [](const RunConfig& c) { return std::to_string(c.model.image_size); }},
      Entry{"image_channels", "image channels (generator and encoder)",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.gen.channels = c.model.image_channels = parse_number<std::size_t>(k, v);
            },
            [](const RunConfig& c) { return std::to_string(c.model.image_channels); }},
      // model
      MMGC_SIZE("patch_size", model.patch_size, "ViT patch side in pixels"),
      MMGC_SIZE("vision_dim", model.vision_dim, "ViT / Q-Former width"),
      MMGC_SIZE("vision_layers", model.vision_layers, "ViT transformer blocks"),
      MMGC_SIZE("vision_heads", model.vision_heads, "attention heads in ViT and Q-Former"),
      MMGC_SIZE("num_queries", model.num_queries, "learned Q-Former query tokens"),
      MMGC_SIZE("qformer_layers", model.qformer_layers, "Q-Former blocks"),
      MMGC_SIZE("text_dim", model.text_dim, "report encoder width"),
      MMGC_SIZE("text_layers", model.text_layers, "report encoder blocks"),
      MMGC_SIZE("text_heads", model.text_heads, "report encoder attention heads"),
      MMGC_SIZE("max_len", model.max_len, "report tokens kept (longer reports are truncated)"),
      MMGC_SIZE("proj_dim", model.proj_dim, "shared projection width"),
      MMGC_SIZE("proj_layers", model.proj_layers, "linear layers per projector"),
      MMGC_SIZE("classifier_layers", model.classifier_layers, "linear layers in the classifier"),
      Entry{"variant", "m1 (image only), m2 (report only) or m3 (fused)",
            [](RunConfig& c, const std::string&, const std::string& v) { c.model.variant = parse_variant(v); },
            [](const RunConfig& c) { return variant_name(c.model.variant); }},
      MMGC_BOOL("freeze_image", model.freeze_image, "keep ViT and Q-Former weights fixed"),
      MMGC_BOOL("freeze_text", model.freeze_text, "keep report encoder weights fixed"),
      // optimization
      MMGC_SIZE("epochs", train.epochs, "passes over the train split"),
      MMGC_SIZE("batch_size", train.batch_size, "samples per optimizer step"),
      MMGC_REAL("lr", train.peak_lr, "peak learning rate"),
      MMGC_BOOL("paper_lr", train.paper_lr, "pin the peak learning rate to 1e-5"),
      MMGC_REAL("warmup_fraction", train.warmup_fraction, "share of optimizer steps spent in linear warmup"),
      MMGC_REAL("beta1", train.adamw.beta1, "AdamW first-moment decay"),
      MMGC_REAL("beta2", train.adamw.beta2, "AdamW second-moment decay"),
      MMGC_REAL("adam_eps", train.adamw.eps, "AdamW denominator epsilon"),
      MMGC_REAL("weight_decay", train.adamw.weight_decay, "decoupled weight decay"),
      Entry{"averaging", "precision/recall/F1 averaging: macro, micro or weighted",
            [](RunConfig& c, const std::string&, const std::string& v) { c.train.averaging = parse_averaging(v); },
            [](const RunConfig& c) { return averaging_name(c.train.averaging); }},
      // runs
      MMGC_U64("seed", seed, "generator seed (gen-data) or base trial seed (train, ablate)"),
      MMGC_SIZE("trials", trials, "seeds per variant in ablate (seed, seed+1, ...)"),
      MMGC_SIZE("jobs", jobs, "concurrent trainings in ablate"),
  };
  return table;
}

#undef MMGC_SIZE
#undef MMGC_U64
#undef MMGC_REAL
#undef MMGC_BOOL

const Entry& find_entry(const std::string& key) {
  for (const auto& e : entries())
    if (key == e.name) return e;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::vector<ConfigKey> config_schema() {
  const RunConfig defaults;
  std::vector<ConfigKey> out;
  for (const auto& e : entries()) out.push_back({e.name, e.get(defaults), e.description});
  return out;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_entry(key).set(cfg, key, value);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) { return find_entry(key).get(cfg); }

void apply_run_config(RunConfig& cfg, std::string_view text, const std::string& origin) {
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value, got '" + body + "'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + "key '" + key + "' given twice");
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      std::string msg = e.what();
      const std::string prefix = "ConfigError: ";
      if (msg.rfind(prefix, 0) == 0) msg.erase(0, prefix.size());
      throw ConfigError(where + msg);
    }
  }
}

RunConfig parse_run_config(std::string_view text, const std::string& origin) {
  RunConfig cfg;
  apply_run_config(cfg, text, origin);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : entries()) out += std::string(e.name) + " = " + e.get(cfg) + "\n";
  return out;
}

}  // namespace mmgc
