#pragma once

// Dense building blocks: shape-checked products, affine layers, elementwise
// activations, their local backward passes, and Adam.
//
// All functions are templated on the Eigen expression type so they accept
// blocks, maps and expressions as well as plain matrices. Batches are stored
// one sample per row.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rlbvae/errors.hpp"

namespace rlbvae {

using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

enum class Activation { relu, sigmoid, tanh };

namespace detail {

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename Scalar>
Scalar sigmoid(Scalar v) {
  // Split by sign so exp never overflows.
  if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
  const Scalar e = std::exp(v);
  return e / (Scalar(1) + e);
}

}  // namespace detail

template <typename DerivedA, typename DerivedB>
auto matmul(const Eigen::MatrixBase<DerivedA>& a,
            const Eigen::MatrixBase<DerivedB>& b) {
  using S = typename DerivedA::Scalar;
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + detail::shape_str(a.rows(), a.cols()) +
                     " times " + detail::shape_str(b.rows(), b.cols()));
  }
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> out = a * b;
  return out;
}

// x (batch x in) * w (in x out) + b (1 x out), b broadcast over rows.
template <typename DX, typename DW, typename DB>
auto affine_forward(const Eigen::MatrixBase<DX>& x,
                    const Eigen::MatrixBase<DW>& w,
                    const Eigen::MatrixBase<DB>& b) {
  if (b.rows() != 1 || b.cols() != w.cols()) {
    throw ShapeError("affine_forward: bias " +
                     detail::shape_str(b.rows(), b.cols()) + " for " +
                     std::to_string(w.cols()) + " outputs");
  }
  auto out = matmul(x, w);
  out.rowwise() += b.row(0);
  return out;
}

template <typename Derived>
auto activation(const Eigen::MatrixBase<Derived>& x, Activation kind) {
  using S = typename Derived::Scalar;
  switch (kind) {
    case Activation::relu:
      return Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>(
          x.array().max(S(0)).matrix());
    case Activation::sigmoid:
      return Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>(
          x.unaryExpr([](S v) { return detail::sigmoid(v); }));
    case Activation::tanh:
      break;
  }
  return Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>(x.array().tanh().matrix());
}

// Gradient through an activation given its cached output and the upstream
// gradient. relu uses the output sign, so the subgradient at 0 is 0.
template <typename DY, typename DG>
auto activation_backward(const Eigen::MatrixBase<DY>& output,
                         const Eigen::MatrixBase<DG>& upstream,
                         Activation kind) {
  using S = typename DY::Scalar;
  using M = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  if (output.rows() != upstream.rows() || output.cols() != upstream.cols()) {
    throw ShapeError("activation_backward: output " +
                     detail::shape_str(output.rows(), output.cols()) +
                     " vs upstream " +
                     detail::shape_str(upstream.rows(), upstream.cols()));
  }
  switch (kind) {
    case Activation::relu:
      return M((output.array() > S(0)).select(upstream.array(), S(0)).matrix());
    case Activation::sigmoid:
      return M((upstream.array() * output.array() * (S(1) - output.array())).matrix());
    case Activation::tanh:
      break;
  }
  return M((upstream.array() * (S(1) - output.array().square())).matrix());
}

template <typename S>
struct MatmulGrads {
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> da;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> db;
};

// For c = a * b with dL/dc = upstream.
template <typename DA, typename DB, typename DG>
MatmulGrads<typename DA::Scalar> matmul_backward(
    const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
    const Eigen::MatrixBase<DG>& upstream) {
  if (upstream.rows() != a.rows() || upstream.cols() != b.cols()) {
    throw ShapeError("matmul_backward: upstream " +
                     detail::shape_str(upstream.rows(), upstream.cols()));
  }
  return {matmul(upstream, b.transpose()), matmul(a.transpose(), upstream)};
}

template <typename S>
struct AffineGrads {
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> dx;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> dw;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> db;  // 1 x out
};

template <typename DX, typename DW, typename DG>
AffineGrads<typename DX::Scalar> affine_backward(
    const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DW>& w,
    const Eigen::MatrixBase<DG>& upstream) {
  auto [dx, dw] = matmul_backward(x, w, upstream);
  return {std::move(dx), std::move(dw), upstream.colwise().sum()};
}

// Adam with bias correction. Moments live alongside their parameters in the
// same order as the parameter list handed to adam_step.
template <typename S = Scalar>
struct AdamStateT {
  using M = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

  S learning_rate = S(1e-3);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S epsilon = S(1e-8);
  std::uint64_t step = 0;
  std::vector<M> m;
  std::vector<M> v;

  // Zeroed moments shaped like params.
  template <typename Range>
  static AdamStateT zeros_like(const Range& params, S lr = S(1e-3)) {
    AdamStateT st;
    st.learning_rate = lr;
    for (const auto& p : params) {
      st.m.push_back(M::Zero(p->rows(), p->cols()));
      st.v.push_back(M::Zero(p->rows(), p->cols()));
    }
    return st;
  }

  friend bool operator==(const AdamStateT&, const AdamStateT&) = default;
};

using AdamState = AdamStateT<Scalar>;

template <typename S>
void adam_step(std::span<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>* const> params,
               std::span<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>* const> grads,
               AdamStateT<S>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != state.v.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) +
                     " params, " + std::to_string(grads.size()) + " grads, " +
                     std::to_string(state.m.size()) + " moments");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = *params[i];
    const auto& g = *grads[i];
    if (p.rows() != g.rows() || p.cols() != g.cols() ||
        p.rows() != state.m[i].rows() || p.cols() != state.m[i].cols()) {
      throw ShapeError("adam_step: tensor " + std::to_string(i) + " is " +
                       detail::shape_str(p.rows(), p.cols()) + ", grad " +
                       detail::shape_str(g.rows(), g.cols()));
    }
  }
  ++state.step;
  const S t = static_cast<S>(state.step);
  const S bc1 = S(1) - std::pow(state.beta1, t);
  const S bc2 = S(1) - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = *grads[i];
    m = state.beta1 * m + (S(1) - state.beta1) * g;
    v = state.beta2 * v + (S(1) - state.beta2) * g.cwiseAbs2();
    params[i]->array() -= state.learning_rate * (m.array() / bc1) /
                          ((v.array() / bc2).sqrt() + state.epsilon);
  }
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

}  // namespace rlbvae
