#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "mmgc/run_config.hpp"

using namespace mmgc;

TEST_CASE("defaults and schema") {
  const auto schema = config_schema();
  std::set<std::string> names;
  for (const auto& k : schema) {
    CHECK_FALSE(k.description.empty());
    names.insert(k.name);
  }
  CHECK(names.size() == schema.size());
  const RunConfig d;
  CHECK(get_config_value(d, "n_samples") == "2000");
  CHECK(get_config_value(d, "a_img") == "0.3");
  CHECK(get_config_value(d, "variant") == "m3");
  CHECK(get_config_value(d, "paper_lr") == "false");
}

TEST_CASE("parse and round trip") {
  const auto cfg = parse_run_config("# comment\n epochs = 7\nvariant=m2  # inline\n\nlr = 0.001\nimage_size = 16\n");
  CHECK(cfg.train.epochs == 7);
  CHECK(cfg.model.variant == Variant::kM2);
  CHECK(cfg.train.peak_lr == 0.001);
  CHECK(cfg.model.image_size == 16);
  CHECK(cfg.gen.image_size == 16);
  const auto again = parse_run_config(to_text(cfg));
  CHECK(to_text(again) == to_text(cfg));
}

TEST_CASE("errors name the line") {
  auto message = [](const std::string& text) {
    try {
      parse_run_config(text, "run.cfg");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("foo = 1\n").find("run.cfg:1") != std::string::npos);
  CHECK(message("epochs = 2\nepochs = 3\n").find("run.cfg:2") != std::string::npos);
  CHECK(message("epochs = two\n").find("two") != std::string::npos);
  CHECK(message("epochs = 2x\n").find("2x") != std::string::npos);
  CHECK_FALSE(message("variant = m4\n").empty());
  CHECK_FALSE(message("freeze_text = maybe\n").empty());
  CHECK_FALSE(message("no equals sign\n").empty());
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.cfg"), IoError);
}
