#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>

#include "mmgc/synth_data.hpp"

using namespace mmgc;
namespace fs = std::filesystem;

namespace {
fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mmgc_synth_" + name);
  fs::remove_all(dir);
  return dir;
}

GenParams params(std::size_t n, std::uint64_t seed = 0) {
  GenParams p;
  p.n_samples = n;
  p.seed = seed;
  return p;
}
}  // namespace

TEST_CASE("parameter validation") {
  auto p = params(100);
  p.a_img = 0.7;
  p.a_txt = 0.4;
  CHECK_THROWS_AS(p.validate(), InvalidParams);
  p = params(100);
  p.sigma = -0.1;
  CHECK_THROWS_AS(p.validate(), InvalidParams);
  p = params(100);
  p.p_gc = 1.5;
  CHECK_THROWS_AS(p.validate(), InvalidParams);
}

TEST_CASE("generate is deterministic and well formed") {
  const auto a = generate(params(1000, 42));
  const auto b = generate(params(1000, 42));
  CHECK(a == b);
  CHECK(generate(params(1000, 43)) != a);
  std::set<std::string> ids;
  for (const auto& s : a) {
    CHECK((s.label == 0 || s.label == 1));
    CHECK(s.image.pixels.size() == 32u * 32u);
    for (float px : s.image.pixels) CHECK((px >= 0.f && px <= 1.f));
    CHECK_FALSE(s.report.empty());
    ids.insert(s.id);
  }
  CHECK(ids.size() == a.size());
}

TEST_CASE("fully informative when both ambiguity rates are zero") {
  auto p = params(300, 1);
  p.a_img = p.a_txt = 0.0;
  for (const auto& s : generate(p)) CHECK(s.ambiguous == Ambiguity::kNone);
}

TEST_CASE("ambiguity and label frequencies") {
  const auto samples = generate(params(10000, 7));
  std::size_t img = 0, txt = 0, gc = 0;
  for (const auto& s : samples) {
    img += s.ambiguous == Ambiguity::kImage;
    txt += s.ambiguous == Ambiguity::kText;
    gc += s.label == 1;
  }
  CHECK(std::abs(img / 10000.0 - 0.3) <= 0.02);
  CHECK(std::abs(txt / 10000.0 - 0.3) <= 0.02);
  CHECK(std::abs(gc / 10000.0 - 0.5) <= 0.02);
}

TEST_CASE("ambiguous renderings ignore the label") {
  const auto p = params(10);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CHECK(render_image(p, seed, 0, true) == render_image(p, seed, 1, true));
    CHECK(render_report(seed, 0, true) == render_report(seed, 1, true));
    CHECK_FALSE(render_image(p, seed, 0, false) == render_image(p, seed, 1, false));
    CHECK(render_report(seed, 0, false) != render_report(seed, 1, false));
  }
}

TEST_CASE("informative reports mention their class template") {
  for (const auto& s : generate(params(200, 3))) {
    if (s.ambiguous == Ambiguity::kText) {
      CHECK(s.report.find("lesion") != std::string::npos);
    } else if (s.label == 1) {
      CHECK(s.report.find("ulcerated") != std::string::npos);
    } else {
      CHECK(s.report.find("leukoplakia") != std::string::npos);
    }
  }
}

TEST_CASE("bayes accuracy") {
  auto p = params(100);
  CHECK(bayes_accuracy(p, Modality::kImage) == doctest::Approx(0.85).epsilon(1e-12));
  CHECK(bayes_accuracy(p, Modality::kText) == doctest::Approx(0.85).epsilon(1e-12));
  CHECK(bayes_accuracy(p, Modality::kFused) == 1.0);
  p.a_img = p.a_txt = 0.0;
  CHECK(bayes_accuracy(p, Modality::kImage) == 1.0);
  CHECK(bayes_accuracy(p, Modality::kText) == 1.0);
  CHECK(bayes_accuracy(p, Modality::kFused) == 1.0);
  p.a_img = 0.5;
  p.p_gc = 0.8;
  CHECK(bayes_accuracy(p, Modality::kImage) == doctest::Approx(0.5 + 0.5 * 0.8));
  p.sigma = 0.2;
  CHECK_THROWS_AS(bayes_accuracy(p, Modality::kImage), InvalidParams);
}

TEST_CASE("split sizes and properties") {
  auto ids_of = [](std::size_t n) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(sample_id(i));
    return ids;
  };
  auto s = split(ids_of(100), 1);
  CHECK(s.train.size() == 80);
  CHECK(s.val.size() == 10);
  CHECK(s.test.size() == 10);
  s = split(ids_of(5799), 1);
  CHECK(s.train.size() == 4639);
  CHECK(s.val.size() == 579);
  CHECK(s.test.size() == 581);
  CHECK(split(ids_of(5799), 1) == s);
  CHECK_FALSE(split(ids_of(5799), 2) == s);

  std::set<std::string> all;
  for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
  CHECK(all.size() == 5799);
  const auto expected = ids_of(5799);
  CHECK(all == std::set<std::string>(expected.begin(), expected.end()));
  CHECK_THROWS_AS(split(ids_of(9), 1), TooFewSamples);
}

TEST_CASE("dataset round trip") {
  const auto dir = scratch("roundtrip");
  const auto samples = generate(params(100, 5));
  std::vector<std::string> ids;
  for (const auto& x : samples) ids.push_back(x.id);
  const auto sp = split(ids, 9);
  save_dataset(samples, sp, dir);
  const auto loaded = load_dataset(dir);
  CHECK(loaded.samples == samples);
  CHECK(loaded.split == sp);
  fs::remove_all(dir);
}

TEST_CASE("image file errors") {
  const auto dir = scratch("images");
  fs::create_directories(dir);
  const Image img{1, 2, 2, {0.f, 0.25f, 0.5f, 1.f}};
  write_image_file(img, dir / "ok.mmgi");
  CHECK(read_image_file(dir / "ok.mmgi") == img);

  {
    std::fstream f(dir / "ok.mmgi", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(read_image_file(dir / "ok.mmgi"), FormatError);

  write_image_file(img, dir / "short.mmgi");
  fs::resize_file(dir / "short.mmgi", fs::file_size(dir / "short.mmgi") - 3);
  CHECK_THROWS_AS(read_image_file(dir / "short.mmgi"), FormatError);
  CHECK_THROWS_AS(read_image_file(dir / "absent.mmgi"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("missing image names the sample") {
  const auto dir = scratch("missing");
  const auto samples = generate(params(20, 6));
  std::vector<std::string> ids;
  for (const auto& x : samples) ids.push_back(x.id);
  save_dataset(samples, split(ids, 1), dir);
  fs::remove(dir / "images" / (samples[3].id + ".mmgi"));
  try {
    load_dataset(dir);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(samples[3].id) != std::string::npos);
  }
  fs::remove_all(dir);
}
