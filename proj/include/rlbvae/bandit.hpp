#pragma once

// Two-armed contextual bandit over face stimuli, the agent loop that drives
// the hypothesis engine, and the aggregate metrics computed from run logs.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "rlbvae/factored.hpp"
#include "rlbvae/io.hpp"
#include "rlbvae/rng.hpp"
#include "rlbvae/stimuli.hpp"
#include "rlbvae/vae.hpp"

namespace rlbvae {

enum class Side : int { left = 0, right = 1 };

inline const char* side_name(Side s) { return s == Side::left ? "left" : "right"; }

struct Trial {
  std::size_t left = 0;  // indices into the test set
  std::size_t right = 0;
  Category left_category = Category::neither;
  Category right_category = Category::neither;
  Side correct = Side::left;
};

struct PolicyOutput {
  double p_left = 0.5;
  double p_right = 0.5;
};

struct RunConfig {
  std::size_t trials = 20;
  std::size_t runs = 1000;
  double temperature = 10.0;  // points
  double upsilon = 0.01;      // fine-tune utility weight; 0 freezes the network
  double beta = 1.0;          // KL weight during fine-tuning
  double learning_rate = 1e-4;  // fine-tune step size
  std::size_t snapshot_every = 5;
};

struct TrialRecord {
  std::size_t trial = 0;  // 1-based
  Category left_category = Category::neither;
  Category right_category = Category::neither;
  double rhat_left = 0;
  double rhat_right = 0;
  double p_left = 0.5;
  Side choice = Side::left;
  double reward = 0;
  bool correct = false;
  FeatureSet decision_features;  // hypothesis used to choose; empty on cold start
  // Hypothesis selected after this trial's experience.
  std::optional<FittedHypothesis> selected;
};

struct LatentSnapshot {
  std::size_t trial = 0;  // 0 = before the first trial
  Matrix mu;              // test-set means, one row per stimulus
};

struct RunLog {
  std::vector<TrialRecord> records;
  std::vector<LatentSnapshot> snapshots;
};

// Two stimuli from two distinct categories (uniform without replacement),
// uniform within category, random side assignment. Throws ConfigError when
// fewer than two categories are populated.
Trial sample_trial(const std::vector<Stimulus>& test_set, Rng& rng);

// p_left = softmax over (rhat_left, rhat_right) / temperature.
PolicyOutput softmax_policy(double rhat_left, double rhat_right, double temperature);

Side sample_choice(const PolicyOutput& policy, Rng& rng);

struct BanditOptions {
  // When set, this hypothesis drives every decision and the engine is not run.
  const FittedHypothesis* fixed_hypothesis = nullptr;
};

// One run of the agent loop. The network is copied; the caller's parameters
// are never modified.
RunLog run_bandit(const NetworkParams& params, const std::vector<Stimulus>& test_set,
                  const HypothesisEngine& engine, const RunConfig& config, Rng& rng,
                  const BanditOptions& options = {});

struct SeriesStats {
  std::vector<double> mean;
  std::vector<double> sem;
};

// Mean correct-choice rate per trial index. Throws AggregationError when the
// logs have different lengths.
std::vector<double> accuracy_by_trial(const std::vector<RunLog>& logs);
SeriesStats accuracy_stats(const std::vector<RunLog>& logs);

struct LogFit {
  double a = 0;  // slope on ln(t)
  double b = 0;  // intercept
  double residual = 0;  // residual sum of squares
};

// Least squares of acc(t) = a ln t + b with t = 1, 2, ...
LogFit fit_log_curve(const std::vector<double>& accuracy);

// Mean over all (x_c, x_neither) pairs of |mu(x_c) - mu(x_neither)|^2 / n_z,
// indexed by category (the neither entry compares the category with itself).
std::array<double, 4> representation_difference(const Matrix& mu,
                                                const std::vector<Category>& categories);
std::array<double, 4> representation_difference(const NetworkParams& params,
                                                const std::vector<Stimulus>& test_set);

// Mean pairwise squared latent distance between two categories.
double representation_distance(const Matrix& mu, const std::vector<Category>& categories,
                               Category a, Category b);

CsvTable run_log_table(const RunLog& log);
CsvTable hypothesis_trace_table(const RunLog& log);

}  // namespace rlbvae
