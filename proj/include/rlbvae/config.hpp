#pragma once

// Experiment configuration. Files use one `section.key = value` per line;
// '#' starts a comment. Every key is also accepted as a `--section.key`
// command-line flag, applied after the file.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rlbvae/bandit.hpp"
#include "rlbvae/factored.hpp"
#include "rlbvae/stimuli.hpp"

namespace rlbvae {

struct VaeSweepConfig {
  std::vector<int> n_z{4, 16, 64};
  std::vector<double> beta{1.0};
  double upsilon = 0.01;
  int epochs = 30;
  int batch_size = 32;
  int hidden = 256;
  double learning_rate = 1e-3;
  std::size_t replicates = 5;  // pretraining seeds per (n_z, beta) cell
};

struct ExperimentConfig {
  DatasetConfig data;
  std::filesystem::path data_dir;       // external images; empty means generate
  std::filesystem::path data_manifest;  // manifest for data_dir
  VaeSweepConfig vae;
  EngineConfig engine;
  RunConfig bandit;
  bool write_run_logs = true;
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;
  int jobs = 1;

  ExperimentConfig();

  // Throws ConfigError naming the first invalid field.
  void validate() const;
};

struct ConfigKey {
  std::string name;  // section.key
  std::string help;
};

// All recognised keys in a fixed order.
const std::vector<ConfigKey>& config_keys();

// Throws ConfigError on an unknown key or unparsable value.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& config, const std::string& key);

// Applies a config file's assignments in order. Errors name the line.
void apply_config_text(ExperimentConfig& config, const std::string& text,
                       const std::string& origin = "config");
void apply_config_file(ExperimentConfig& config, const std::filesystem::path& path);

// Every key, one `key = value` line each; round-trips through apply_config_text.
std::string config_to_text(const ExperimentConfig& config);

}  // namespace rlbvae
