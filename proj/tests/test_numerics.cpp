#include <doctest.h>

#include <cmath>
#include <functional>
#include <set>

#include "rlbvae/errors.hpp"
#include "rlbvae/numerics.hpp"
#include "rlbvae/rng.hpp"

using namespace rlbvae;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
  return m;
}

Matrix loop_matmul(const Matrix& a, const Matrix& b) {
  Matrix out = Matrix::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (Eigen::Index k = 0; k < a.cols(); ++k) out(i, j) += a(i, k) * b(k, j);
  return out;
}

double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3});
}

}  // namespace

TEST_CASE("matmul") {
  Rng rng(1);
  const Matrix m = random_matrix(rng, 3, 3);
  CHECK(matmul(Matrix::Identity(3, 3), m) == m);

  Matrix a(1, 1), b(1, 1);
  a << 2;
  b << 3;
  CHECK(matmul(a, b)(0, 0) == 6.0);

  // Same summation order as the loop, so equality is exact for 5 terms.
  const Matrix x = random_matrix(rng, 4, 5), y = random_matrix(rng, 5, 2);
  CHECK((matmul(x, y) - loop_matmul(x, y)).cwiseAbs().maxCoeff() < 1e-15);

  CHECK_THROWS_AS(matmul(x, x), ShapeError);
}

TEST_CASE("affine_forward") {
  Rng rng(2);
  const Matrix x = random_matrix(rng, 2, 3);
  CHECK(affine_forward(x, Matrix::Identity(3, 3), Matrix::Zero(1, 3)) == x);

  const Matrix b = random_matrix(rng, 1, 4);
  const Matrix zero_out = affine_forward(Matrix::Zero(5, 3), random_matrix(rng, 3, 4), b);
  for (Eigen::Index i = 0; i < 5; ++i) CHECK(zero_out.row(i) == b);

  const Matrix w = random_matrix(rng, 3, 4);
  Matrix oracle = loop_matmul(x, w);
  for (Eigen::Index i = 0; i < oracle.rows(); ++i) oracle.row(i) += b;
  CHECK((affine_forward(x, w, b) - oracle).cwiseAbs().maxCoeff() < 1e-14);

  CHECK_THROWS_AS(affine_forward(x, w, random_matrix(rng, 1, 3)), ShapeError);
  CHECK_THROWS_AS(affine_forward(x, random_matrix(rng, 2, 4), b), ShapeError);
}

TEST_CASE("activations") {
  Matrix v(1, 2);
  v << -1, 2;
  const Matrix r = activation(v, Activation::relu);
  CHECK(r(0, 0) == 0.0);
  CHECK(r(0, 1) == 2.0);
  CHECK(activation(Matrix::Zero(1, 1), Activation::sigmoid)(0, 0) == 0.5);

  Matrix grid(1, 201);
  for (int i = 0; i <= 200; ++i) grid(0, i) = -5.0 + 0.05 * i;
  const Matrix t = activation(grid, Activation::tanh);
  for (int i = 0; i <= 200; ++i) {
    const double x = grid(0, i);
    CHECK(std::abs(t(0, i) - (std::exp(x) - std::exp(-x)) / (std::exp(x) + std::exp(-x))) <
          1e-12);
  }

  Matrix extreme(1, 4);
  extreme << -30, -5, 5, 30;
  const Matrix s = activation(extreme, Activation::sigmoid);
  for (int i = 0; i < 4; ++i) {
    CHECK(s(0, i) > 0.0);
    CHECK(s(0, i) < 1.0);
  }
  Matrix huge(1, 2);
  huge << -1e4, 1e4;
  CHECK(all_finite(activation(huge, Activation::sigmoid)));
  CHECK(all_finite(activation(huge, Activation::tanh)));
}

TEST_CASE("backward: zero upstream and linear case") {
  Rng rng(3);
  const Matrix x = random_matrix(rng, 4, 3), w = random_matrix(rng, 3, 2);
  const auto g0 = affine_backward(x, w, Matrix::Zero(4, 2));
  CHECK(g0.dx.isZero(0));
  CHECK(g0.dw.isZero(0));
  CHECK(g0.db.isZero(0));
  for (auto kind : {Activation::relu, Activation::sigmoid, Activation::tanh}) {
    CHECK(activation_backward(activation(x, kind), Matrix::Zero(4, 3), kind).isZero(0));
  }

  // loss = sum(x w + b) for one row: d/db is a vector of ones.
  const Matrix one = random_matrix(rng, 1, 3);
  const auto g1 = affine_backward(one, w, Matrix::Ones(1, 2));
  CHECK(g1.db == Matrix::Ones(1, 2));
}

TEST_CASE("backward: two-layer network against central differences") {
  // loss = sum(c .* sigmoid(tanh(x w1 + b1) w2 + b2)) + sum(relu(x w3))
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix x = random_matrix(rng, 3, 4);
    Matrix w1 = random_matrix(rng, 4, 5), b1 = random_matrix(rng, 1, 5);
    Matrix w2 = random_matrix(rng, 5, 2), b2 = random_matrix(rng, 1, 2);
    Matrix w3 = random_matrix(rng, 4, 2);
    const Matrix c = random_matrix(rng, 3, 2);

    auto loss = [&] {
      const Matrix h = activation(affine_forward(x, w1, b1), Activation::tanh);
      const Matrix o = activation(affine_forward(h, w2, b2), Activation::sigmoid);
      return (c.array() * o.array()).sum() + activation(matmul(x, w3), Activation::relu).sum();
    };

    const Matrix h = activation(affine_forward(x, w1, b1), Activation::tanh);
    const Matrix o = activation(affine_forward(h, w2, b2), Activation::sigmoid);
    const Matrix d_pre2 = activation_backward(o, c, Activation::sigmoid);
    const auto g2 = affine_backward(h, w2, d_pre2);
    const Matrix d_pre1 = activation_backward(h, g2.dx, Activation::tanh);
    const auto g1 = affine_backward(x, w1, d_pre1);
    const Matrix r = activation(matmul(x, w3), Activation::relu);
    const auto g3 = matmul_backward(x, w3, activation_backward(r, Matrix::Ones(3, 2),
                                                              Activation::relu));

    std::vector<std::pair<Matrix*, Matrix>> checks = {
        {&w1, g1.dw}, {&b1, g1.db}, {&w2, g2.dw}, {&b2, g2.db}, {&w3, g3.db}};
    const double h_step = 1e-3;
    double worst = 0;
    for (auto& [p, analytic] : checks) {
      for (Eigen::Index i = 0; i < p->size(); ++i) {
        const double saved = p->data()[i];
        p->data()[i] = saved + h_step;
        const double up = loss();
        p->data()[i] = saved - h_step;
        const double down = loss();
        p->data()[i] = saved;
        worst = std::max(worst, rel_error(analytic.data()[i], (up - down) / (2 * h_step)));
      }
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradients leave parameters unchanged") {
    Rng rng(5);
    Matrix p = random_matrix(rng, 2, 3);
    const Matrix before = p;
    const Matrix g = Matrix::Zero(2, 3);
    std::array<Matrix*, 1> ps{&p};
    std::array<const Matrix*, 1> gs{&g};
    auto st = AdamState::zeros_like(ps);
    for (int i = 0; i < 100; ++i) adam_step<double>(ps, gs, st);
    CHECK(p == before);
    CHECK(st.step == 100);
  }
  SUBCASE("one bias-corrected step") {
    Matrix p = Matrix::Constant(1, 1, 2.0);
    const Matrix g = Matrix::Ones(1, 1);
    std::array<Matrix*, 1> ps{&p};
    std::array<const Matrix*, 1> gs{&g};
    auto st = AdamState::zeros_like(ps, 0.1);
    adam_step<double>(ps, gs, st);
    // m_hat = v_hat = 1, so the step is lr / (1 + eps).
    CHECK(p(0, 0) == doctest::Approx(2.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  }
  SUBCASE("deterministic") {
    auto run = [] {
      Rng rng(6);
      Matrix p = random_matrix(rng, 3, 3);
      std::array<Matrix*, 1> ps{&p};
      auto st = AdamState::zeros_like(ps);
      for (int i = 0; i < 10; ++i) {
        const Matrix g = random_matrix(rng, 3, 3);
        std::array<const Matrix*, 1> gs{&g};
        adam_step<double>(ps, gs, st);
      }
      return p;
    };
    CHECK(run() == run());
  }
  SUBCASE("shape mismatch") {
    Matrix p = Matrix::Zero(2, 2);
    const Matrix g = Matrix::Zero(2, 3);
    std::array<Matrix*, 1> ps{&p};
    std::array<const Matrix*, 1> gs{&g};
    auto st = AdamState::zeros_like(ps);
    CHECK_THROWS_AS(adam_step<double>(ps, gs, st), ShapeError);
  }
}

TEST_CASE("adam_step works on single precision") {
  Eigen::MatrixXf p = Eigen::MatrixXf::Constant(1, 1, 1.0f);
  const Eigen::MatrixXf g = Eigen::MatrixXf::Ones(1, 1);
  std::array<Eigen::MatrixXf*, 1> ps{&p};
  std::array<const Eigen::MatrixXf*, 1> gs{&g};
  auto st = AdamStateT<float>::zeros_like(ps, 0.5f);
  adam_step<float>(ps, gs, st);
  CHECK(p(0, 0) == doctest::Approx(0.5f));
}

TEST_CASE("sample_standard_normal") {
  Rng a(11), b(11), c(12);
  const Vector va = sample_standard_normal(a, 100);
  CHECK(va == sample_standard_normal(b, 100));
  CHECK(va != sample_standard_normal(c, 100));

  Rng big(13);
  const Vector v = sample_standard_normal(big, 100000);
  const double mean = v.mean();
  const double var = (v.array() - mean).square().sum() / double(v.size() - 1);
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.05);

  CHECK_THROWS_AS(sample_standard_normal(big, 0), PreconditionError);
}

TEST_CASE("Rng streams") {
  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.uniform_index(5) < 5);
  }
  Rng x(99), y(99);
  for (int i = 0; i < 10; ++i) CHECK(x.next_u64() == y.next_u64());

  std::set<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < 50; ++i) {
    seeds.insert(derive_seed(1, "a", {i}));
    seeds.insert(derive_seed(1, "b", {i}));
  }
  CHECK(seeds.size() == 100);
  CHECK(derive_seed(5, "tag", {1, 2}) == derive_seed(5, "tag", {1, 2}));
  CHECK(derive_seed(5, "tag", {1, 2}) != derive_seed(5, "tag", {2, 1}));
}
