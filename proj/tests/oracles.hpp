#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance binary.

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <vector>

#include "rlbvae/factored.hpp"
#include "rlbvae/rng.hpp"

namespace oracle {

using rlbvae::FeatureSet;
using rlbvae::Matrix;
using rlbvae::Vector;

struct RidgeFit {
  Vector weights;
  double bias = 0;
  double mse = 0;
};

// Ridge with an unpenalized bias, solved as an augmented least-squares
// problem by Householder QR (no normal equations).
inline RidgeFit ridge_qr(const Matrix& z, const Vector& r, const FeatureSet& f, double ridge) {
  const Eigen::Index n = z.rows(), k = Eigen::Index(f.size());
  Matrix a = Matrix::Zero(n + k, k + 1);
  Vector b = Vector::Zero(n + k);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) a(i, j) = z(i, f[std::size_t(j)]);
    a(i, k) = 1.0;
    b[i] = r[i];
  }
  for (Eigen::Index j = 0; j < k; ++j) a(n + j, j) = std::sqrt(ridge);
  const Vector x = a.colPivHouseholderQr().solve(b);
  RidgeFit out;
  out.weights = x.head(k);
  out.bias = x[k];
  out.mse = (a.topRows(n) * x - r).squaredNorm() / double(n);
  return out;
}

// Every non-empty subset of {0..n_z-1} with at most k_total members.
inline std::vector<FeatureSet> all_subsets(int n_z, int k_total) {
  std::vector<FeatureSet> out;
  for (unsigned mask = 1; mask < (1u << n_z); ++mask) {
    FeatureSet s;
    for (int i = 0; i < n_z; ++i)
      if (mask & (1u << i)) s.push_back(i);
    if (int(s.size()) <= k_total) out.push_back(s);
  }
  return out;
}

// Argmin of mse over all subsets. Scores within a relative `tol` of the
// minimum are tied; ties go to fewer features, then the lexicographically
// smaller set.
inline FeatureSet brute_force_argmin(const Matrix& z, const Vector& r, int k_total, double ridge,
                                     double tol = 1e-9) {
  const auto subsets = all_subsets(int(z.cols()), k_total);
  std::vector<double> mse;
  for (const auto& s : subsets) mse.push_back(ridge_qr(z, r, s, ridge).mse);
  const double lowest = *std::min_element(mse.begin(), mse.end());
  FeatureSet best;
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    if (mse[i] > lowest + tol * std::max(1.0, lowest)) continue;
    const auto& s = subsets[i];
    if (best.empty() || s.size() < best.size() || (s.size() == best.size() && s < best)) best = s;
  }
  return best;
}

struct Problem {
  Matrix z;
  Vector r;
  FeatureSet truth;
};

// Gaussian latents, 1 or 2 true features with weights of magnitude 1..5,
// reward noise sigma.
inline Problem synthetic_problem(rlbvae::Rng& rng, int n_z, int records, double sigma) {
  Problem p;
  p.z.resize(records, n_z);
  for (Eigen::Index i = 0; i < p.z.size(); ++i) p.z.data()[i] = rng.normal();
  const int k = 1 + int(rng.uniform_index(2));
  while (int(p.truth.size()) < k) {
    const int f = int(rng.uniform_index(std::uint64_t(n_z)));
    if (std::find(p.truth.begin(), p.truth.end(), f) == p.truth.end()) p.truth.push_back(f);
  }
  std::sort(p.truth.begin(), p.truth.end());
  const double bias = rng.uniform(-10, 10);
  p.r = Vector::Constant(records, bias);
  for (int f : p.truth) {
    const double w = rng.uniform(1, 5) * (rng.uniform() < 0.5 ? -1 : 1);
    p.r += w * p.z.col(f);
  }
  for (Eigen::Index i = 0; i < records; ++i) p.r[i] += sigma * rng.normal();
  return p;
}

inline rlbvae::ExperienceBuffer to_buffer(const Matrix& z, const Vector& r) {
  rlbvae::ExperienceBuffer b(int(z.cols()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    b.append({z.row(i).transpose(), 0, r[i], std::size_t(i)});
  }
  return b;
}

inline bool contains(const FeatureSet& outer, const FeatureSet& inner) {
  return std::includes(outer.begin(), outer.end(), inner.begin(), inner.end());
}

}  // namespace oracle
