#pragma once

// Sweep orchestration, analysis and the command-line front end.
//
// Seeds: every random stream is derive_seed(master, tag, indices) with
//   dataset            "harness.dataset"
//   pretraining        "harness.pretrain", {n_z, bits(beta), replicate}
//   bandit run i       "harness.bandit",   {n_z, bits(beta), i}
// Bandit run i uses pretraining replicate i mod replicates.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "rlbvae/config.hpp"

namespace rlbvae {

inline constexpr const char* kToolVersion = "1.0.0";

struct CellKey {
  int n_z = 0;
  double beta = 1.0;
  std::string id() const;  // e.g. nz4_beta1
};

struct CellResult {
  CellKey key;
  bool ok = false;
  std::string error;
  // Paths are relative to the output directory.
  std::vector<std::string> checkpoints;
  std::vector<std::string> loss_curves;
  std::string pretrain_summary;  // epoch,mean_reconstruction,...
  std::string accuracy;          // trial,mean_accuracy,sem,log_fit_a,log_fit_b
  std::string representation;    // phase,category,mean_repr_mse,sem
  std::string runs_dir;          // empty when run logs are disabled
  double pretrain_seconds = 0;
  double bandit_seconds = 0;
};

struct ExperimentManifest {
  std::string tool_version = kToolVersion;
  std::string config_text;
  std::vector<CellResult> cells;
  std::vector<std::string> analysis;  // filled in by analyze
  double total_seconds = 0;

  bool complete() const;
  std::string str(bool with_timings = true) const;
  static ExperimentManifest parse(const std::string& text);
  static ExperimentManifest load(const std::filesystem::path& path);
};

// Runs fn(0..n-1) on up to `jobs` threads. The first exception (lowest
// index) is rethrown after all workers finish.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

Dataset load_or_make_dataset(const ExperimentConfig& config);

// Pretraining only; no bandit. Cells keep their pretraining artifacts.
ExperimentManifest run_pretraining(const ExperimentConfig& config);

// Pretrain every (n_z, beta) cell, run the bandit on every cell, write
// aggregate CSVs and finally out/manifest.txt. A failing cell is recorded
// and the others continue.
ExperimentManifest run_sweep(const ExperimentConfig& config);

// Reads a manifest and writes panel_left.csv, panel_middle.csv and
// panel_right.csv into out_dir (default: <manifest dir>/analysis). Throws
// IngestionError naming a missing artifact.
std::vector<std::filesystem::path> analyze(const std::filesystem::path& manifest_path,
                                           std::filesystem::path out_dir = {});

// Exit status: 0 success, 1 usage error, 2 runtime or data error.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rlbvae
