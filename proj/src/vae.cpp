#include "rlbvae/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace rlbvae {

namespace {

Matrix glorot(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  // Row-major fill order keeps the stream layout independent of Eigen storage.
  for (Eigen::Index r = 0; r < fan_in; ++r)
    for (Eigen::Index c = 0; c < fan_out; ++c) w(r, c) = rng.uniform(-limit, limit);
  return w;
}

void check_input(const NetworkParams& p, Eigen::Index cols, const char* what) {
  if (cols != p.shape.input_dim()) {
    throw ShapeError(std::string(what) + ": input has " + std::to_string(cols) +
                     " pixels, network expects " + std::to_string(p.shape.input_dim()));
  }
}

void check_latent(const NetworkParams& p, Eigen::Index n, const char* what) {
  if (n != p.shape.n_z) {
    throw ShapeError(std::string(what) + ": latent length " + std::to_string(n) +
                     ", network n_z " + std::to_string(p.shape.n_z));
  }
}

double bce_pixel(double x, double x_hat) {
  const double q = std::clamp(x_hat, kPixelClamp, 1.0 - kPixelClamp);
  return -(x * std::log(q) + (1.0 - x) * std::log(1.0 - q));
}

// Cached activations of one batch forward pass.
struct Forward {
  Matrix h1;       // B x hidden
  Matrix lv_raw;   // B x n_z, before clamping
  LatentBatch latent;
  Matrix std_dev;  // exp(log_var / 2)
  Matrix z;
  Matrix h2;
  Matrix x_hat;
  Vector utility;
};

Forward forward(const NetworkParams& p, const Matrix& x, const Matrix& eps,
                const UtilityReadout* readout) {
  Forward f;
  f.h1 = activation(affine_forward(x, p.enc_w, p.enc_b), Activation::tanh);
  f.latent.mu = affine_forward(f.h1, p.mu_w, p.mu_b);
  f.lv_raw = affine_forward(f.h1, p.logvar_w, p.logvar_b);
  f.latent.log_var = f.lv_raw.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
  f.std_dev = (0.5 * f.latent.log_var.array()).exp().matrix();
  f.z = f.latent.mu + f.std_dev.cwiseProduct(eps);
  f.h2 = activation(affine_forward(f.z, p.dec_w, p.dec_b), Activation::tanh);
  f.x_hat = activation(affine_forward(f.h2, p.out_w, p.out_b), Activation::sigmoid);
  if (readout) {
    f.utility.resize(f.z.rows());
    for (Eigen::Index i = 0; i < f.z.rows(); ++i) f.utility[i] = readout->predict(f.z.row(i).transpose());
  } else {
    f.utility = affine_forward(f.z, p.util_w, p.util_b).col(0);
  }
  return f;
}

LossBreakdown batch_loss(const Forward& f, const Matrix& x, const Vector& rewards,
                         const TrainHyper& hyper) {
  const Eigen::Index n = x.rows();
  LossBreakdown out;
  out.beta = hyper.beta;
  out.upsilon = hyper.upsilon;
  for (Eigen::Index i = 0; i < n; ++i) {
    out.reconstruction += reconstruction_loss(x.row(i).transpose(), f.x_hat.row(i).transpose());
    out.kl += kl_diag_gaussian({f.latent.mu.row(i).transpose(), f.latent.log_var.row(i).transpose()});
    const double err = f.utility[i] - rewards[i];
    out.utility += err * err;
  }
  out.reconstruction /= double(n);
  out.kl /= double(n);
  out.utility /= double(n);
  out.total = out.reconstruction + hyper.beta * out.kl + hyper.upsilon * out.utility;
  return out;
}

void check_batch(const NetworkParams& params, const Matrix& images, const Vector& rewards,
                 const TrainHyper& hyper) {
  if (images.rows() == 0) throw PreconditionError("empty batch");
  check_input(params, images.cols(), "batch");
  if (rewards.size() != images.rows()) {
    throw ShapeError("batch has " + std::to_string(images.rows()) + " images and " +
                     std::to_string(rewards.size()) + " rewards");
  }
  if (hyper.beta < 0 || hyper.upsilon < 0) {
    throw ConfigError("beta and upsilon must be non-negative");
  }
}

}  // namespace

NetworkParams NetworkParams::init(const NetworkShape& shape, Rng& rng) {
  if (shape.n_z < 1 || shape.hidden < 1 || shape.width < 1 || shape.height < 1) {
    throw ConfigError("network dimensions must be positive");
  }
  const Eigen::Index d = shape.input_dim(), h = shape.hidden, k = shape.n_z;
  NetworkParams p;
  p.shape = shape;
  p.enc_w = glorot(d, h, rng);
  p.enc_b = Matrix::Zero(1, h);
  p.mu_w = glorot(h, k, rng);
  p.mu_b = Matrix::Zero(1, k);
  p.logvar_w = glorot(h, k, rng);
  p.logvar_b = Matrix::Zero(1, k);
  p.dec_w = glorot(k, h, rng);
  p.dec_b = Matrix::Zero(1, h);
  p.out_w = glorot(h, d, rng);
  p.out_b = Matrix::Zero(1, d);
  p.util_w = glorot(k, 1, rng);
  p.util_b = Matrix::Zero(1, 1);
  return p;
}

NetworkParams NetworkParams::zeros(const NetworkShape& shape) {
  const Eigen::Index d = shape.input_dim(), h = shape.hidden, k = shape.n_z;
  NetworkParams p;
  p.shape = shape;
  p.enc_w = Matrix::Zero(d, h);
  p.enc_b = Matrix::Zero(1, h);
  p.mu_w = Matrix::Zero(h, k);
  p.mu_b = Matrix::Zero(1, k);
  p.logvar_w = Matrix::Zero(h, k);
  p.logvar_b = Matrix::Zero(1, k);
  p.dec_w = Matrix::Zero(k, h);
  p.dec_b = Matrix::Zero(1, h);
  p.out_w = Matrix::Zero(h, d);
  p.out_b = Matrix::Zero(1, d);
  p.util_w = Matrix::Zero(k, 1);
  p.util_b = Matrix::Zero(1, 1);
  return p;
}

std::array<Matrix*, NetworkParams::kTensorCount> NetworkParams::tensors() {
  return {&enc_w, &enc_b, &mu_w,  &mu_b,  &logvar_w, &logvar_b,
          &dec_w, &dec_b, &out_w, &out_b, &util_w,   &util_b};
}

std::array<const Matrix*, NetworkParams::kTensorCount> NetworkParams::tensors() const {
  return {&enc_w, &enc_b, &mu_w,  &mu_b,  &logvar_w, &logvar_b,
          &dec_w, &dec_b, &out_w, &out_b, &util_w,   &util_b};
}

bool NetworkParams::all_finite() const {
  return std::ranges::all_of(tensors(), [](const Matrix* m) { return m->allFinite(); });
}

double UtilityReadout::predict(const Eigen::Ref<const Vector>& z) const {
  double out = bias;
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (features[j] < 0 || features[j] >= z.size()) {
      throw ShapeError("utility readout feature " + std::to_string(features[j]) +
                       " outside latent of length " + std::to_string(z.size()));
    }
    out += weights[Eigen::Index(j)] * z[features[j]];
  }
  return out;
}

LatentBatch encode_batch(const NetworkParams& params, const Matrix& images) {
  check_input(params, images.cols(), "encode");
  const Matrix h1 = activation(affine_forward(images, params.enc_w, params.enc_b), Activation::tanh);
  LatentBatch out;
  out.mu = affine_forward(h1, params.mu_w, params.mu_b);
  out.log_var = affine_forward(h1, params.logvar_w, params.logvar_b)
                    .cwiseMax(kLogVarMin)
                    .cwiseMin(kLogVarMax);
  return out;
}

LatentDistribution encode(const NetworkParams& params, const Image& image) {
  if (image.width != params.shape.width || image.height != params.shape.height) {
    throw ShapeError("encode: image is " + std::to_string(image.width) + "x" +
                     std::to_string(image.height) + ", network expects " +
                     std::to_string(params.shape.width) + "x" +
                     std::to_string(params.shape.height));
  }
  LatentBatch b = encode_batch(params, image.pixels.transpose());
  return {b.mu.row(0).transpose(), b.log_var.row(0).transpose()};
}

Vector sample_latent(const LatentDistribution& dist, const Vector& eps) {
  if (eps.size() != dist.mu.size() || dist.log_var.size() != dist.mu.size()) {
    throw ShapeError("sample_latent: mismatched lengths");
  }
  return dist.mu + (0.5 * dist.log_var.array()).exp().matrix().cwiseProduct(eps);
}

Vector sample_latent(const LatentDistribution& dist, Rng& rng) {
  return sample_latent(dist, sample_standard_normal(rng, dist.mu.size()));
}

Matrix decode_batch(const NetworkParams& params, const Matrix& z) {
  check_latent(params, z.cols(), "decode");
  const Matrix h2 = activation(affine_forward(z, params.dec_w, params.dec_b), Activation::tanh);
  return activation(affine_forward(h2, params.out_w, params.out_b), Activation::sigmoid);
}

Image decode(const NetworkParams& params, const Vector& z) {
  check_latent(params, z.size(), "decode");
  Image out(params.shape.width, params.shape.height);
  out.pixels = decode_batch(params, z.transpose()).row(0).transpose();
  return out;
}

double predict_utility(const NetworkParams& params, const Vector& z) {
  check_latent(params, z.size(), "predict_utility");
  return z.dot(params.util_w.col(0)) + params.util_b(0, 0);
}

double kl_diag_gaussian(const LatentDistribution& dist) {
  const auto mu = dist.mu.array();
  const auto lv = dist.log_var.array();
  return 0.5 * (mu.square() + lv.exp() - lv - 1.0).sum();
}

double reconstruction_loss(const Eigen::Ref<const Vector>& x,
                           const Eigen::Ref<const Vector>& x_hat) {
  if (x.size() != x_hat.size()) {
    throw ShapeError("reconstruction_loss: " + std::to_string(x.size()) + " vs " +
                     std::to_string(x_hat.size()) + " pixels");
  }
  double sum = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) sum += bce_pixel(x[i], x_hat[i]);
  return sum;
}

double reconstruction_loss(const Image& x, const Image& x_hat) {
  if (x.width != x_hat.width || x.height != x_hat.height) {
    throw ShapeError("reconstruction_loss: image shapes differ");
  }
  return reconstruction_loss(x.pixels, x_hat.pixels);
}

LossBreakdown rl_loss(const Image& x, const Image& x_hat, const LatentDistribution& dist,
                      double prediction, double reward, double beta, double upsilon) {
  if (beta < 0 || upsilon < 0) throw ConfigError("beta and upsilon must be non-negative");
  if (!std::isfinite(reward) || !std::isfinite(prediction)) {
    throw NumericalError("rl_loss: non-finite reward or prediction");
  }
  LossBreakdown out;
  out.beta = beta;
  out.upsilon = upsilon;
  out.reconstruction = reconstruction_loss(x, x_hat);
  out.kl = kl_diag_gaussian(dist);
  out.utility = (prediction - reward) * (prediction - reward);
  out.total = out.reconstruction + beta * out.kl + upsilon * out.utility;
  return out;
}

LossAndGradients loss_and_gradients(const NetworkParams& p, const Matrix& x,
                                    const Vector& rewards, const Matrix& eps,
                                    const TrainHyper& hyper, const UtilityReadout* readout) {
  check_batch(p, x, rewards, hyper);
  if (eps.rows() != x.rows() || eps.cols() != p.shape.n_z) {
    throw ShapeError("loss_and_gradients: eps must be batch x n_z");
  }
  const Forward f = forward(p, x, eps, readout);
  LossAndGradients out{batch_loss(f, x, rewards, hyper), NetworkParams{}};
  NetworkParams& g = out.grads;
  g.shape = p.shape;

  const double inv_n = 1.0 / double(x.rows());

  // Sigmoid + cross-entropy collapse to (x_hat - x); zero where the clamp is active.
  Matrix d_logits = (f.x_hat - x) * inv_n;
  for (Eigen::Index i = 0; i < d_logits.size(); ++i) {
    const double q = f.x_hat.data()[i];
    if (q < kPixelClamp || q > 1.0 - kPixelClamp) d_logits.data()[i] = 0.0;
  }
  auto out_grads = affine_backward(f.h2, p.out_w, d_logits);
  g.out_w = std::move(out_grads.dw);
  g.out_b = std::move(out_grads.db);

  const Matrix d_a2 = activation_backward(f.h2, out_grads.dx, Activation::tanh);
  auto dec_grads = affine_backward(f.z, p.dec_w, d_a2);
  g.dec_w = std::move(dec_grads.dw);
  g.dec_b = std::move(dec_grads.db);
  Matrix d_z = std::move(dec_grads.dx);

  const Matrix d_u = (2.0 * hyper.upsilon * inv_n) * (f.utility - rewards);
  if (readout) {
    for (std::size_t j = 0; j < readout->features.size(); ++j) {
      d_z.col(readout->features[j]) += readout->weights[Eigen::Index(j)] * d_u.col(0);
    }
    g.util_w = Matrix::Zero(p.util_w.rows(), p.util_w.cols());
    g.util_b = Matrix::Zero(1, 1);
  } else {
    auto util_grads = affine_backward(f.z, p.util_w, d_u);
    g.util_w = std::move(util_grads.dw);
    g.util_b = std::move(util_grads.db);
    d_z += util_grads.dx;
  }

  const Matrix d_mu = d_z + (hyper.beta * inv_n) * f.latent.mu;
  Matrix d_lv = (0.5 * d_z.array() * eps.array() * f.std_dev.array() +
                 (0.5 * hyper.beta * inv_n) * (f.latent.log_var.array().exp() - 1.0))
                    .matrix();
  d_lv = (f.lv_raw.array() < kLogVarMin || f.lv_raw.array() > kLogVarMax)
             .select(0.0, d_lv.array())
             .matrix();

  auto mu_grads = affine_backward(f.h1, p.mu_w, d_mu);
  auto lv_grads = affine_backward(f.h1, p.logvar_w, d_lv);
  g.mu_w = std::move(mu_grads.dw);
  g.mu_b = std::move(mu_grads.db);
  g.logvar_w = std::move(lv_grads.dw);
  g.logvar_b = std::move(lv_grads.db);

  const Matrix d_a1 =
      activation_backward(f.h1, mu_grads.dx + lv_grads.dx, Activation::tanh);
  // The input gradient of the first layer is never needed.
  g.enc_w = matmul(x.transpose(), d_a1);
  g.enc_b = d_a1.colwise().sum();
  return out;
}

LossBreakdown evaluate_loss(const NetworkParams& params, const Matrix& images,
                            const Vector& rewards, const TrainHyper& hyper) {
  check_batch(params, images, rewards, hyper);
  const Matrix eps = Matrix::Zero(images.rows(), params.shape.n_z);
  return batch_loss(forward(params, images, eps, nullptr), images, rewards, hyper);
}

AdamState make_adam(const NetworkParams& params, double learning_rate) {
  return AdamState::zeros_like(params.tensors(), learning_rate);
}

LossBreakdown train_step(NetworkParams& params, const Matrix& images, const Vector& rewards,
                         const TrainHyper& hyper, AdamState& adam, Rng& rng,
                         const UtilityReadout* readout) {
  Matrix eps(images.rows(), params.shape.n_z);
  for (Eigen::Index r = 0; r < eps.rows(); ++r)
    for (Eigen::Index c = 0; c < eps.cols(); ++c) eps(r, c) = rng.normal();

  LossAndGradients lg = loss_and_gradients(params, images, rewards, eps, hyper, readout);
  if (!std::isfinite(lg.loss.total) || !lg.grads.all_finite()) {
    std::ostringstream msg;
    msg << "non-finite loss at Adam step " << adam.step + 1
        << ": reconstruction=" << lg.loss.reconstruction << " kl=" << lg.loss.kl
        << " utility=" << lg.loss.utility << " total=" << lg.loss.total;
    for (std::size_t i = 0; i < NetworkParams::kTensorCount; ++i) {
      msg << ' ' << NetworkParams::kTensorNames[i]
          << "_maxabs=" << params.tensors()[i]->cwiseAbs().maxCoeff();
    }
    throw TrainingError(msg.str());
  }
  auto ps = params.tensors();
  const auto& gs = std::as_const(lg.grads).tensors();
  adam_step<Scalar>(ps, gs, adam);
  return lg.loss;
}

Checkpoint pretrain(const Dataset& dataset, const PretrainConfig& config) {
  if (dataset.train.empty()) throw PreconditionError("pretrain: empty train split");
  if (config.epochs < 0 || config.batch_size < 1) {
    throw ConfigError("pretrain: epochs must be >= 0 and batch_size >= 1");
  }
  const NetworkShape shape{dataset.image_width(), dataset.image_height(), config.n_z,
                           config.hidden};
  Rng init_rng(derive_seed(config.seed, "vae.init"));
  Rng shuffle_rng(derive_seed(config.seed, "vae.shuffle"));
  Rng noise_rng(derive_seed(config.seed, "vae.noise"));

  Checkpoint ckpt;
  ckpt.params = NetworkParams::init(shape, init_rng);
  ckpt.adam = make_adam(ckpt.params, config.learning_rate);

  std::vector<const Image*> images;
  for (const auto& s : dataset.train) images.push_back(&s.image);
  const Matrix all = stack_images(images);
  const Eigen::Index n = all.rows();
  const Vector zero_rewards = Vector::Zero(n);
  const TrainHyper hyper{config.beta, config.upsilon};

  ckpt.loss_curve.push_back(evaluate_loss(ckpt.params, all, zero_rewards, hyper));

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);
    }
    for (Eigen::Index start = 0; start < n; start += config.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(config.batch_size, n - start);
      Matrix batch(len, all.cols());
      for (Eigen::Index r = 0; r < len; ++r) batch.row(r) = all.row(order[std::size_t(start + r)]);
      train_step(ckpt.params, batch, Vector::Zero(len), hyper, ckpt.adam, noise_rng);
    }
    ckpt.epoch = static_cast<std::uint64_t>(epoch);
    ckpt.loss_curve.push_back(evaluate_loss(ckpt.params, all, zero_rewards, hyper));
  }
  return ckpt;
}

}  // namespace rlbvae
