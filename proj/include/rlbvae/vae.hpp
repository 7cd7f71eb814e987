#pragma once

// Beta-VAE with a scalar utility head.
//
//   encoder  x -> tanh(x We + be) -> {mu, log_var}   (log_var clamped to +-10)
//   sample   z = mu + exp(log_var / 2) * eps
//   decoder  z -> tanh(z Wd + bd) -> sigmoid(. Wo + bo) = x_hat
//   utility  u = z Wu + bu
//
// The minimized per-stimulus objective is
//   BCE(x, x_hat) + beta * KL(q(z|x) || N(0, I)) + upsilon * (u - r)^2.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlbvae/numerics.hpp"
#include "rlbvae/rng.hpp"
#include "rlbvae/stimuli.hpp"

namespace rlbvae {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;
inline constexpr double kPixelClamp = 1e-7;

struct NetworkShape {
  int width = 32;
  int height = 32;
  int n_z = 16;
  int hidden = 256;

  Eigen::Index input_dim() const { return Eigen::Index(width) * height; }
  friend bool operator==(const NetworkShape&, const NetworkShape&) = default;
};

struct NetworkParams {
  static constexpr std::size_t kTensorCount = 12;
  static constexpr std::array<const char*, kTensorCount> kTensorNames = {
      "enc_w", "enc_b", "mu_w",  "mu_b",  "logvar_w", "logvar_b",
      "dec_w", "dec_b", "out_w", "out_b", "util_w",   "util_b"};

  NetworkShape shape;
  Matrix enc_w, enc_b;        // input x hidden, 1 x hidden
  Matrix mu_w, mu_b;          // hidden x n_z
  Matrix logvar_w, logvar_b;  // hidden x n_z
  Matrix dec_w, dec_b;        // n_z x hidden
  Matrix out_w, out_b;        // hidden x input
  Matrix util_w, util_b;      // n_z x 1, 1 x 1

  // Glorot-uniform weights, zero biases.
  static NetworkParams init(const NetworkShape& shape, Rng& rng);
  // Same shapes, all zero.
  static NetworkParams zeros(const NetworkShape& shape);

  // Fixed declared order, shared by Adam and the checkpoint format.
  std::array<Matrix*, kTensorCount> tensors();
  std::array<const Matrix*, kTensorCount> tensors() const;

  bool all_finite() const;
  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

struct LatentDistribution {
  Vector mu;
  Vector log_var;
};

// One row per stimulus.
struct LatentBatch {
  Matrix mu;
  Matrix log_var;
};

struct LossBreakdown {
  double reconstruction = 0;
  double kl = 0;
  double utility = 0;  // squared prediction error, before the upsilon weight
  double total = 0;
  double beta = 0;
  double upsilon = 0;
};

struct TrainHyper {
  double beta = 1.0;
  double upsilon = 0.01;
};

// A fixed linear reward readout on selected latent indices. When supplied to
// training it replaces the utility head; gradients flow into z only.
struct UtilityReadout {
  std::vector<int> features;
  Vector weights;
  double bias = 0;

  double predict(const Eigen::Ref<const Vector>& z) const;
};

LatentDistribution encode(const NetworkParams& params, const Image& image);
LatentBatch encode_batch(const NetworkParams& params, const Matrix& images);

Vector sample_latent(const LatentDistribution& dist, Rng& rng);
Vector sample_latent(const LatentDistribution& dist, const Vector& eps);

Image decode(const NetworkParams& params, const Vector& z);
Matrix decode_batch(const NetworkParams& params, const Matrix& z);

double predict_utility(const NetworkParams& params, const Vector& z);

double kl_diag_gaussian(const LatentDistribution& dist);

// Bernoulli cross-entropy summed over pixels, x_hat clamped to [1e-7, 1 - 1e-7].
double reconstruction_loss(const Image& x, const Image& x_hat);
double reconstruction_loss(const Eigen::Ref<const Vector>& x,
                           const Eigen::Ref<const Vector>& x_hat);

// Throws ConfigError on negative beta or upsilon, NumericalError on
// non-finite reward.
LossBreakdown rl_loss(const Image& x, const Image& x_hat, const LatentDistribution& dist,
                      double prediction, double reward, double beta, double upsilon);

struct LossAndGradients {
  LossBreakdown loss;  // batch mean
  NetworkParams grads;
};

// Deterministic given eps (one row of noise per stimulus). Passing a zero eps
// evaluates at z = mu.
LossAndGradients loss_and_gradients(const NetworkParams& params, const Matrix& images,
                                    const Vector& rewards, const Matrix& eps,
                                    const TrainHyper& hyper,
                                    const UtilityReadout* readout = nullptr);

// Loss at z = mu, no gradients.
LossBreakdown evaluate_loss(const NetworkParams& params, const Matrix& images,
                            const Vector& rewards, const TrainHyper& hyper);

// One sampled forward/backward pass and Adam update. Throws TrainingError if
// the loss is not finite; params and state are left untouched in that case.
LossBreakdown train_step(NetworkParams& params, const Matrix& images, const Vector& rewards,
                         const TrainHyper& hyper, AdamState& adam, Rng& rng,
                         const UtilityReadout* readout = nullptr);

AdamState make_adam(const NetworkParams& params, double learning_rate = 1e-3);

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  NetworkParams params;
  AdamState adam;
  std::uint64_t epoch = 0;
  std::vector<LossBreakdown> loss_curve;  // entry 0 is the pre-training evaluation
};

struct PretrainConfig {
  int n_z = 16;
  int hidden = 256;
  int epochs = 30;
  int batch_size = 32;
  double beta = 1.0;
  double upsilon = 0.01;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

// Shuffled mini-batch training on the train split with every reward target
// fixed to 0. loss_curve[e] is the z = mu evaluation over the whole train
// split after e epochs.
Checkpoint pretrain(const Dataset& dataset, const PretrainConfig& config);

// Binary checkpoint: see docs in checkpoint.cpp. Writes a sidecar
// <path>.meta.txt. Both files are written to temporaries and renamed.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void write_loss_curve_csv(const std::vector<LossBreakdown>& curve,
                          const std::filesystem::path& path);

}  // namespace rlbvae
