#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rlbvae/errors.hpp"
#include "rlbvae/io.hpp"
#include "rlbvae/vae.hpp"

using namespace rlbvae;
namespace fs = std::filesystem;

namespace {

Matrix uniform_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo, double hi) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

NetworkParams random_params(const NetworkShape& shape, Rng& rng, double scale) {
  NetworkParams p = NetworkParams::zeros(shape);
  for (Matrix* t : p.tensors()) *t = uniform_matrix(rng, t->rows(), t->cols(), -scale, scale);
  return p;
}

// Largest relative error between the analytic gradient and central
// differences over every parameter entry. The 1e-3 floor keeps h^2
// truncation on near-zero entries from dominating.
double gradient_check(NetworkParams params, const Matrix& x, const Vector& r, const Matrix& eps,
                      const TrainHyper& hyper, const UtilityReadout* readout = nullptr,
                      double h = 1e-3) {
  const LossAndGradients lg = loss_and_gradients(params, x, r, eps, hyper, readout);
  const auto grads = lg.grads.tensors();
  const auto tensors = params.tensors();
    double worst = 0;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    for (Eigen::Index i = 0; i < tensors[t]->size(); ++i) {
      double& v = tensors[t]->data()[i];
      const double saved = v;
      v = saved + h;
      const double up = loss_and_gradients(params, x, r, eps, hyper, readout).loss.total;
      v = saved - h;
      const double down = loss_and_gradients(params, x, r, eps, hyper, readout).loss.total;
      v = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads[t]->data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

Nuisance quiet(int jx = 0, int jy = 0, double brightness = 1.0) {
  Nuisance n;
  n.jitter_x = jx;
  n.jitter_y = jy;
  n.brightness = brightness;
  n.noise_sigma = 0.0;
  return n;
}

struct Trained {
  Dataset data;
  Checkpoint ckpt;
  NetworkParams untrained;
};

// Default pretraining budget, shared by the trained-model cases.
const Trained& trained() {
  static const Trained t = [] {
    Trained out;
    DatasetConfig dc;
    dc.seed = 21;
    out.data = make_dataset(dc);
    PretrainConfig pc;
    pc.seed = 22;
    out.ckpt = pretrain(out.data, pc);
    Rng init(derive_seed(pc.seed, "vae.init"));
    out.untrained = NetworkParams::init({32, 32, pc.n_z, pc.hidden}, init);
    return out;
  }();
  return t;
}

Matrix test_images(const Dataset& d) {
  std::vector<const Image*> imgs;
  for (const auto& s : d.test) imgs.push_back(&s.image);
  return stack_images(imgs);
}

}  // namespace

TEST_CASE("network shapes and initialization") {
  Rng rng(1);
  const NetworkShape shape{8, 8, 3, 5};
  const NetworkParams p = NetworkParams::init(shape, rng);
  CHECK(p.enc_w.rows() == 64);
  CHECK(p.enc_w.cols() == 5);
  CHECK(p.mu_w.cols() == 3);
  CHECK(p.out_w.cols() == 64);
  CHECK(p.util_w.rows() == 3);
  CHECK(p.util_b.size() == 1);
  CHECK(p.enc_b.isZero(0));
  const double limit = std::sqrt(6.0 / (64 + 5));
  CHECK(p.enc_w.cwiseAbs().maxCoeff() <= limit);
  CHECK(p.all_finite());
  Rng again(1);
  CHECK(NetworkParams::init(shape, again) == p);
}

TEST_CASE("encode") {
  Rng rng(2);
  const NetworkParams p = NetworkParams::init({32, 32, 4, 16}, rng);
  const Image img = render_stimulus({true, false}, quiet());
  const auto a = encode(p, img);
  const auto b = encode(p, img);
  CHECK(a.mu == b.mu);
  CHECK(a.log_var == b.log_var);
  CHECK(a.mu.allFinite());
  CHECK(a.log_var.cwiseAbs().maxCoeff() <= 10.0);

  NetworkParams wild = p;
  wild.logvar_b.setConstant(50.0);
  CHECK(encode(wild, img).log_var.maxCoeff() == kLogVarMax);
  wild.logvar_b.setConstant(-50.0);
  CHECK(encode(wild, img).log_var.minCoeff() == kLogVarMin);

  CHECK_THROWS_AS(encode(p, render_stimulus({}, quiet(), 16)), ShapeError);
  const auto batch = encode_batch(p, stack_images({&img, &img}));
  CHECK(batch.mu.row(1).transpose().isApprox(a.mu, 1e-12));
}

TEST_CASE("sample_latent") {
  LatentDistribution narrow{Vector::Constant(3, 0.7), Vector::Constant(3, -10.0)};
  Rng rng(3);
  int close = 0;
  for (int i = 0; i < 100; ++i) {
    if ((sample_latent(narrow, rng) - narrow.mu).cwiseAbs().maxCoeff() < 0.05) ++close;
  }
  CHECK(close >= 99);

  CHECK(sample_latent(narrow, Vector::Zero(3)) == narrow.mu);

  LatentDistribution unit{Vector::Ones(1), Vector::Zero(1)};
  double sum = 0, sq = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double z = sample_latent(unit, rng)[0];
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  CHECK(std::abs(mean - 1.0) < 0.05);
  CHECK(std::abs((sq - n * mean * mean) / (n - 1) - 1.0) < 0.1);
}

TEST_CASE("decode and predict_utility") {
  Rng rng(4);
  NetworkParams p = NetworkParams::init({16, 16, 3, 8}, rng);
  for (int i = 0; i < 20; ++i) {
    const Vector z = uniform_matrix(rng, 3, 1, -20, 20);
    const Image x = decode(p, z);
    CHECK(x.pixels.minCoeff() > 0.0);
    CHECK(x.pixels.maxCoeff() < 1.0);
    CHECK(decode(p, z).pixels == x.pixels);
  }
  CHECK_THROWS_AS(decode(p, Vector::Zero(2)), ShapeError);

  p.util_w.setZero();
  p.util_b(0, 0) = 25.0;
  CHECK(predict_utility(p, Vector::Constant(3, 9.0)) == 25.0);
  p.util_w << 2.0, -1.0, 0.5;
  p.util_b(0, 0) = 5.0;
  Vector z(3);
  z << 1, 4, 6;
  CHECK(predict_utility(p, z) == doctest::Approx(2.0 - 4.0 + 3.0 + 5.0));
  CHECK_THROWS_AS(predict_utility(p, Vector::Zero(4)), ShapeError);
}

TEST_CASE("kl_diag_gaussian") {
  CHECK(kl_diag_gaussian({Vector::Zero(4), Vector::Zero(4)}) == 0.0);
  CHECK(kl_diag_gaussian({Vector::Ones(1), Vector::Zero(1)}) == doctest::Approx(0.5));

  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const LatentDistribution d{uniform_matrix(rng, 3, 1, -2, 2), uniform_matrix(rng, 3, 1, -3, 3)};
    CHECK(kl_diag_gaussian(d) > 0.0);
  }
  // Monte Carlo of E_q[log q - log p].
  for (int i = 0; i < 5; ++i) {
    const LatentDistribution d{uniform_matrix(rng, 2, 1, -1.5, 1.5),
                               uniform_matrix(rng, 2, 1, -1.5, 1.5)};
    const int n = 100000;
    double sum = 0, sq = 0;
    for (int s = 0; s < n; ++s) {
      double term = 0;
      for (int j = 0; j < 2; ++j) {
        const double e = rng.normal();
        const double z = d.mu[j] + std::exp(0.5 * d.log_var[j]) * e;
        term += -0.5 * d.log_var[j] - 0.5 * e * e + 0.5 * z * z;
      }
      sum += term;
      sq += term * term;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sq / n - mean * mean) / n);
    CHECK(std::abs(mean - kl_diag_gaussian(d)) < 3 * se);
  }
}

TEST_CASE("Monte Carlo KL errors are standard normal") {
  // Calibration of the 3-SE check: over many distributions the standardized
  // error should have unit variance and rarely exceed 3.
  Rng rng(16);
  const int distributions = 1000, n = 20000;
  double sum_sq = 0;
  int over = 0;
  for (int d = 0; d < distributions; ++d) {
    const LatentDistribution dist{uniform_matrix(rng, 2, 1, -2, 2), uniform_matrix(rng, 2, 1, -2, 2)};
    double sum = 0, sq = 0;
    for (int s = 0; s < n; ++s) {
      double term = 0;
      for (int j = 0; j < 2; ++j) {
        const double e = rng.normal();
        const double z = dist.mu[j] + std::exp(0.5 * dist.log_var[j]) * e;
        term += -0.5 * dist.log_var[j] - 0.5 * e * e + 0.5 * z * z;
      }
      sum += term;
      sq += term * term;
    }
    const double mean = sum / n;
    const double z = (mean - kl_diag_gaussian(dist)) / std::sqrt((sq / n - mean * mean) / (n - 1));
    sum_sq += z * z;
    if (std::abs(z) > 3) ++over;
  }
  CHECK(std::abs(sum_sq / distributions - 1.0) < 0.12);
  CHECK(over <= 10);
}

TEST_CASE("reconstruction_loss") {
  Image x(2, 2), same(2, 2);
  x.pixels << 0, 1, 1, 0;
  same.pixels = x.pixels;
  CHECK(reconstruction_loss(x, same) < 4 * 1.1e-7);

  Image one(1, 1), half(1, 1);
  one.pixels << 1.0;
  half.pixels << 0.5;
  CHECK(reconstruction_loss(one, half) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Rng rng(6);
  for (int i = 0; i < 10; ++i) {
    const Vector a = uniform_matrix(rng, 50, 1, 0, 1);
    const Vector b = uniform_matrix(rng, 50, 1, 0, 1);
    double oracle = 0;
    for (int p = 0; p < 50; ++p) {
      const double q = std::clamp(b[p], 1e-7, 1 - 1e-7);
      oracle -= a[p] * std::log(q) + (1 - a[p]) * std::log(1 - q);
    }
    CHECK(std::abs(reconstruction_loss(a, b) - oracle) < 1e-10);
  }
  CHECK_THROWS_AS(reconstruction_loss(x, one), ShapeError);
}

TEST_CASE("rl_loss") {
  Rng rng(7);
  Image x(4, 4), xh(4, 4);
  x.pixels = uniform_matrix(rng, 16, 1, 0, 1);
  xh.pixels = uniform_matrix(rng, 16, 1, 0.1, 0.9);
  const LatentDistribution d{uniform_matrix(rng, 2, 1, -1, 1), uniform_matrix(rng, 2, 1, -1, 1)};
  const double rec = reconstruction_loss(x, xh), kl = kl_diag_gaussian(d);

  const auto eq1 = rl_loss(x, xh, d, 30, 25, 2.0, 0.0);
  CHECK(eq1.total == doctest::Approx(rec + 2.0 * kl));
  CHECK(rl_loss(x, xh, d, 30, 1000, 2.0, 0.0).total == eq1.total);
  CHECK(rl_loss(x, xh, d, 30, 25, 0.0, 0.0).total == doctest::Approx(rec));

  const auto with_u = rl_loss(x, xh, d, 30, 25, 1.0, 0.1);
  CHECK(with_u.utility == 25.0);
  CHECK(with_u.total - (rec + kl) == doctest::Approx(2.5));
  CHECK(with_u.beta == 1.0);
  CHECK(with_u.upsilon == 0.1);

  CHECK_THROWS_AS(rl_loss(x, xh, d, 0, 0, -1.0, 0.0), ConfigError);
  CHECK_THROWS_AS(rl_loss(x, xh, d, 0, 0, 1.0, -0.1), ConfigError);
  CHECK_THROWS_AS(rl_loss(x, xh, d, 0, NAN, 1.0, 0.1), NumericalError);
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(8);
  const NetworkShape shape{8, 8, 2, 6};
  for (int trial = 0; trial < 10; ++trial) {
    const NetworkParams p = random_params(shape, rng, 0.3);
    const Matrix x = uniform_matrix(rng, 3, 64, 0, 1);
    const Vector r = uniform_matrix(rng, 3, 1, 0, 75);
    const Matrix eps = uniform_matrix(rng, 3, 2, -2, 2);
    CHECK(gradient_check(p, x, r, eps, {1.5, 0.01}) < 1e-4);

    // A reward-scale readout makes the loss stiff enough that h = 1e-3
    // truncation alone reaches ~1e-4, so this one uses a finer step.
    UtilityReadout readout{{1}, Vector::Constant(1, 20.0), 5.0};
    CHECK(gradient_check(p, x, r, eps, {1.0, 0.1}, &readout, 1e-4) < 1e-4);
  }
}

TEST_CASE("readout mode leaves the utility head alone") {
  Rng rng(9);
  const NetworkParams p = random_params({8, 8, 2, 4}, rng, 0.3);
  const Matrix x = uniform_matrix(rng, 2, 64, 0, 1);
  const UtilityReadout readout{{0, 1}, Vector::Constant(2, 3.0), 1.0};
  const auto lg = loss_and_gradients(p, x, Vector::Constant(2, 50.0), Matrix::Zero(2, 2),
                                     {1.0, 0.5}, &readout);
  CHECK(lg.grads.util_w.isZero(0));
  CHECK(lg.grads.util_b.isZero(0));
  CHECK(!lg.grads.mu_w.isZero(0));
}

TEST_CASE("train_step") {
  Rng rng(10);
  const NetworkShape shape{16, 16, 2, 8};
  const Matrix x = uniform_matrix(rng, 4, 256, 0, 1);
  const Vector r = Vector::Zero(4);

  SUBCASE("zero learning rate") {
    NetworkParams p = NetworkParams::init(shape, rng);
    const NetworkParams before = p;
    AdamState adam = make_adam(p, 0.0);
    train_step(p, x, r, {}, adam, rng);
    CHECK(p == before);
    CHECK(adam.step == 1);
  }
  SUBCASE("non-finite loss") {
    NetworkParams p = NetworkParams::init(shape, rng);
    p.util_b(0, 0) = NAN;
    const NetworkParams before = p;
    AdamState adam = make_adam(p);
    CHECK_THROWS_AS(train_step(p, x, r, {}, adam, rng), TrainingError);
    CHECK(adam.step == 0);
    CHECK(p.enc_w == before.enc_w);
  }
  SUBCASE("empty batch") {
    NetworkParams p = NetworkParams::init(shape, rng);
    AdamState adam = make_adam(p);
    CHECK_THROWS(train_step(p, Matrix(0, 256), Vector(0), {}, adam, rng));
  }
}

TEST_CASE("200 steps reduce the loss") {
  DatasetConfig dc;
  dc.train = 32;
  dc.seed = 11;
  const Dataset ds = make_dataset(dc);
  std::vector<const Image*> imgs;
  for (const auto& s : ds.train) imgs.push_back(&s.image);
  const Matrix batch = stack_images(imgs);
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    NetworkParams p = NetworkParams::init({32, 32, 4, 64}, rng);
    AdamState adam = make_adam(p);
    const TrainHyper hyper{1.0, 0.0};
    double first = 0, last = 0;
    for (int step = 0; step < 200; ++step) {
      const double total = train_step(p, batch, Vector::Zero(32), hyper, adam, rng).total;
      if (step == 0) first = total;
      last = total;
    }
    if (last < first) ++improved;
  }
  CHECK(improved >= 19);
}

TEST_CASE("checkpoint round trip") {
  DatasetConfig dc;
  dc.train = 16;
  dc.size = 16;
  dc.test_per_category = 1;
  const Dataset ds = make_dataset(dc);
  PretrainConfig pc;
  pc.n_z = 3;
  pc.hidden = 8;
  pc.epochs = 2;
  pc.batch_size = 5;
  pc.seed = 12;
  const Checkpoint ck = pretrain(ds, pc);

  const std::string bytes = serialize_checkpoint(ck);
  CHECK(bytes.substr(0, 8) == "RLBVAECK");
  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(back.params == ck.params);
  CHECK(back.adam == ck.adam);
  CHECK(back.epoch == 2);
  CHECK(serialize_checkpoint(back) == bytes);

  const fs::path dir = fs::temp_directory_path() / "rlbvae_test_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_checkpoint(ck, dir / "a.ckpt");
  CHECK(fs::exists(dir / "a.ckpt.meta.txt"));
  CHECK(read_file(dir / "a.ckpt") == bytes);
  CHECK(serialize_checkpoint(load_checkpoint(dir / "a.ckpt")) == bytes);

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), FormatError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);

  write_loss_curve_csv(ck.loss_curve, dir / "curve.csv");
  const CsvTable curve = CsvTable::load(dir / "curve.csv");
  CHECK(curve.header() ==
        std::vector<std::string>{"epoch", "reconstruction", "kl", "utility", "total"});
  CHECK(curve.rows().size() == 3);
}

TEST_CASE("pretrain bookkeeping and determinism") {
  DatasetConfig dc;
  dc.train = 24;
  dc.size = 16;
  dc.test_per_category = 1;
  const Dataset ds = make_dataset(dc);
  PretrainConfig pc;
  pc.n_z = 2;
  pc.hidden = 8;
  pc.epochs = 3;
  pc.batch_size = 7;
  pc.seed = 13;
  const Checkpoint a = pretrain(ds, pc);
  const Checkpoint b = pretrain(ds, pc);
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
  REQUIRE(a.loss_curve.size() == 4);

  Rng init(derive_seed(pc.seed, "vae.init"));
  const NetworkParams fresh = NetworkParams::init({16, 16, 2, 8}, init);
  std::vector<const Image*> imgs;
  for (const auto& s : ds.train) imgs.push_back(&s.image);
  const auto l0 = evaluate_loss(fresh, stack_images(imgs), Vector::Zero(24), {1.0, 0.01});
  CHECK(a.loss_curve[0].total == l0.total);
  CHECK(a.loss_curve[0].reconstruction == l0.reconstruction);

  pc.batch_size = 0;
  CHECK_THROWS_AS(pretrain(ds, pc), ConfigError);
  CHECK_THROWS_AS(pretrain(Dataset{}, PretrainConfig{}), PreconditionError);
}

TEST_CASE("trained model: loss trend") {
  const auto& curve = trained().ckpt.loss_curve;
  REQUIRE(curve.size() == 31);
  auto smoothed = [&](std::size_t end) {
    double s = 0;
    for (std::size_t e = end - 4; e <= end; ++e) s += curve[e].reconstruction;
    return s / 5;
  };
  CHECK(smoothed(30) < curve[1].reconstruction);
  CHECK(smoothed(30) < smoothed(5));
}

TEST_CASE("trained model: encoding respects nuisance and attributes") {
  const auto& params = trained().ckpt.params;
  Rng rng(14);
  double within = 0, across = 0;
  for (int i = 0; i < 50; ++i) {
    const Category c = static_cast<Category>(rng.uniform_index(4));
    Category other = static_cast<Category>(rng.uniform_index(3));
    if (other >= c) other = static_cast<Category>(int(other) + 1);
    const Nuisance n1 = sample_nuisance(rng, 0.0), n2 = sample_nuisance(rng, 0.0);
    const Image x = render_stimulus(Attributes::from(c), n1);
    CHECK(encode(params, x).mu == encode(params, render_stimulus(Attributes::from(c), n1)).mu);
    const Vector mu = encode(params, x).mu;
    within += (mu - encode(params, render_stimulus(Attributes::from(c), n2)).mu).squaredNorm();
    across += (mu - encode(params, render_stimulus(Attributes::from(other), n2)).mu).squaredNorm();
  }
  MESSAGE("within ", within / 50, " across ", across / 50);
  CHECK(within < across);
}

TEST_CASE("trained model: reconstructions improve") {
  const auto& t = trained();
  auto mse = [&](const NetworkParams& p) {
    double s = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      const Image& x = t.data.test[i * t.data.test.size() / 50].image;
      s += (decode(p, encode(p, x).mu).pixels - x.pixels).squaredNorm() / double(x.size());
    }
    return s / 50;
  };
  const double after = mse(t.ckpt.params), before = mse(t.untrained);
  MESSAGE("per-pixel mse before ", before, " after ", after);
  CHECK(after < before);
}

TEST_CASE("trained model: utility head learns rewards from experience") {
  const auto& t = trained();
  NetworkParams p = t.ckpt.params;
  AdamState adam = make_adam(p, 1e-3);
  Rng rng(15);
  const Matrix all = test_images(t.data);
  Vector rewards(all.rows());
  for (Eigen::Index i = 0; i < all.rows(); ++i) {
    rewards[i] = reward_of(t.data.test[std::size_t(i)].attributes);
  }
  for (int step = 0; step < 400; ++step) {
    Matrix batch(8, all.cols());
    Vector r(8);
    for (int k = 0; k < 8; ++k) {
      const auto i = Eigen::Index(rng.uniform_index(std::uint64_t(all.rows())));
      batch.row(k) = all.row(i);
      r[k] = rewards[i];
    }
    train_step(p, batch, r, {1.0, 1.0}, adam, rng);
  }
  const LatentBatch z = encode_batch(p, all);
  double err = 0;
  for (Eigen::Index i = 0; i < all.rows(); ++i) {
    err += std::abs(predict_utility(p, z.mu.row(i).transpose()) - rewards[i]);
  }
  err /= double(all.rows());
  MESSAGE("mean |prediction - reward| ", err);
  CHECK(err < 12.5);
}
