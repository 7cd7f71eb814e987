#pragma once

// Factored-reward hypothesis engine.
//
// A hypothesis is a set of scopes over latent indices. Each per-scope reward
// term is linear, so the summed reward of any hypothesis is a single linear
// function of the union of its scopes; hypotheses are therefore identified
// with that feature set. Every trial the engine refits all hypotheses by
// ridge regression on the experience buffer, scores them by squared error,
// and keeps the argmin.

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rlbvae/numerics.hpp"

namespace rlbvae {

// Sorted, unique latent indices.
using Scope = std::vector<int>;
using FeatureSet = std::vector<int>;

// Per-feature scope of a factored transition P_i(z'_i | z[S_i], a). Declared
// for completeness; the bandit has no successor state, so it is never fitted.
struct TransitionScope {
  int target = 0;
  Scope parents;
};

struct Hypothesis {
  std::vector<Scope> scopes;
  FeatureSet features;  // union of scopes
};

struct FittedHypothesis {
  Hypothesis hypothesis;
  int n_z = 0;
  Vector weights;  // one per feature, in feature order
  double bias = 0;
  double mse = 0;  // training MSE over the buffer
  std::size_t fit_count = 0;

  const FeatureSet& features() const { return hypothesis.features; }
};

struct Experience {
  Vector z;
  int action = 0;
  double reward = 0;
  std::size_t trial = 0;
};

class ExperienceBuffer {
 public:
  explicit ExperienceBuffer(int n_z) : n_z_(n_z) {}

  // Throws ShapeError if z has the wrong length.
  void append(Experience e);

  int n_z() const { return n_z_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<Experience>& records() const { return records_; }

  // records x n_z and records x 1 views used by the fitter.
  Matrix latents() const;
  Vector rewards() const;

 private:
  int n_z_;
  std::vector<Experience> records_;
};

struct EngineConfig {
  int k_max = 2;        // largest scope
  int k_total = 2;      // largest feature set
  double ridge = 1e-3;
  std::size_t window = 0;  // most recent records scored; 0 means the whole buffer
};

// All subsets of {0..n_z-1} with 1..k_max elements, by size then
// lexicographically. Throws ConfigError unless 1 <= k_max <= n_z.
std::vector<Scope> enumerate_scopes(int n_z, int k_max);

// One hypothesis per distinct union of candidate scopes with at most k_total
// features, ordered by size then lexicographically.
std::vector<Hypothesis> generate_hypotheses(const std::vector<Scope>& scopes, int k_total);

// Ridge regression of reward on z[features] with an unpenalized bias:
//   minimize sum (r - w.z[F] - b)^2 + ridge * |w|^2.
// Solved from the centred normal equations with an LDLT factorization.
// Throws NumericalError if the system is singular (possible only at ridge 0).
FittedHypothesis fit_hypothesis(const Hypothesis& h, const ExperienceBuffer& buffer,
                                double ridge = 1e-3);
FittedHypothesis fit_hypothesis(const Hypothesis& h, const Matrix& latents,
                                const Vector& rewards, double ridge = 1e-3);

// Mean squared prediction error over the most recent min(window, size)
// records; window 0 means the whole buffer.
double evaluate_hypothesis(const FittedHypothesis& f, const ExperienceBuffer& buffer,
                           std::size_t window = 0);

// Scores within this relative distance of the lowest mse count as tied.
inline constexpr double kMseTieTolerance = 1e-9;

// Lowest mse; ties go to fewer features, then the lexicographically smaller
// feature set. Throws PreconditionError on an empty list.
const FittedHypothesis& select_hypothesis(const std::vector<FittedHypothesis>& candidates);

double predict_reward(const FittedHypothesis& f, const Eigen::Ref<const Vector>& z);

std::string format_feature_set(const FeatureSet& features);

class HypothesisEngine {
 public:
  HypothesisEngine(int n_z, const EngineConfig& config);
  // Reuses a hypothesis list shared between engines with the same n_z/config.
  HypothesisEngine(int n_z, const EngineConfig& config,
                   std::shared_ptr<const std::vector<Hypothesis>> hypotheses);

  static std::shared_ptr<const std::vector<Hypothesis>> build_space(int n_z,
                                                                    const EngineConfig& config);

  // Refit every hypothesis on the buffer and select. Empty buffer: nullopt.
  std::optional<FittedHypothesis> refresh(const ExperienceBuffer& buffer) const;

  const std::vector<Hypothesis>& hypotheses() const { return *hypotheses_; }
  const EngineConfig& config() const { return config_; }
  int n_z() const { return n_z_; }

 private:
  int n_z_;
  EngineConfig config_;
  std::shared_ptr<const std::vector<Hypothesis>> hypotheses_;
};

}  // namespace rlbvae
