#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mmgc/model_config.hpp"
#include "mmgc/synth_data.hpp"
#include "mmgc/train.hpp"

namespace mmgc {

// Everything a run can be configured with. Text form is one `key = value`
// per line; `#` starts a comment. Unknown or repeated keys are errors.
struct RunConfig {
  ModelConfig model;  // vocab_size is always taken from the dataset
  TrainConfig train;
  GenParams gen;
  std::size_t trials = 5;
  std::uint64_t seed = 0;          // generator seed for gen-data, trial seed otherwise
  std::uint64_t split_seed = 1234;
  std::size_t jobs = 1;
};

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string description;
};

// The published schema, in documentation order.
std::vector<ConfigKey> config_schema();

// Throws ConfigError naming the key and the offending value.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

// `origin` prefixes error messages ("run.cfg:3: ...").
RunConfig parse_run_config(std::string_view text, const std::string& origin = "config");
RunConfig load_run_config(const std::filesystem::path& path);
// Applies `text` on top of an existing configuration.
void apply_run_config(RunConfig& cfg, std::string_view text, const std::string& origin = "config");

// Every key with its effective value, in schema order; parses back to `cfg`.
std::string to_text(const RunConfig& cfg);

}  // namespace mmgc
