// Dense operator algebra: commutators, adjoint-action superoperators, and
// entire functions of the adjoint action evaluated through the spectrum.
#pragma once

#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <complex>

#include "cq/common.hpp"

namespace cq {

inline Matrix commutator(const Matrix& a, const Matrix& b) {
  return a * b - b * a;
}

inline Matrix anticommutator(const Matrix& a, const Matrix& b) {
  return a * b + b * a;
}

// Column-stacking vectorization and its inverse.
inline Vector vec(const Matrix& m) {
  return Eigen::Map<const Vector>(m.data(), m.size());
}

inline Matrix unvec(const Vector& v, int dim) {
  return Eigen::Map<const Matrix>(v.data(), dim, dim);
}

// Dense superoperator acting on vectorized operators (column stacking).
struct Superoperator {
  Matrix mat;  // (dim*dim) x (dim*dim)
  int dim = 0;

  Matrix apply(const Matrix& y) const { return unvec(mat * vec(y), dim); }
};

// Superoperator of the adjoint action ad_X(Y) = XY - YX.
// With column stacking, vec(XY) = (I (x) X) vec(Y) and
// vec(YX) = (X^T (x) I) vec(Y).
inline Superoperator ad_superoperator(const Matrix& x) {
  const int d = static_cast<int>(x.rows());
  Matrix id = identity(d);
  Superoperator s;
  s.dim = d;
  s.mat = Eigen::kroneckerProduct(id, x) -
          Eigen::kroneckerProduct(x.transpose(), id);
  return s;
}

// (scale * ad_X)^n applied to Y by repeated commutators.
inline Matrix ad_power_apply(const Matrix& x, const Matrix& y, int n,
                             Complex scale = Complex{1.0, 0.0}) {
  Matrix out = y;
  for (int k = 0; k < n; ++k) out = scale * commutator(x, out);
  return out;
}

// phi(z) = (exp(z) - 1) / z, extended by phi(0) = 1. The Taylor branch
// avoids cancellation for small |z|.
inline Complex phi(Complex z) {
  if (std::abs(z) < 1e-3) {
    return 1.0 + z * (1.0 / 2.0 + z * (1.0 / 6.0 + z * (1.0 / 24.0 +
                      z * (1.0 / 120.0))));
  }
  return (std::exp(z) - 1.0) / z;
}

namespace detail {

// Series evaluation phi(scale * ad_X) Y = sum_k (scale * ad_X)^k Y / (k+1)!.
// Entire function, so this converges for any bounded argument; it is the
// fallback when X has no convenient spectral decomposition.
inline Matrix phi_of_ad_series(const Matrix& x, const Matrix& y,
                               Complex scale) {
  Matrix sum = y;
  Matrix term = y;
  const double floor_norm = std::max(1.0, y.norm());
  for (int k = 1; k <= 400; ++k) {
    term = (scale / static_cast<double>(k + 1)) * commutator(x, term);
    sum += term;
    if (term.norm() <= 1e-18 * floor_norm && k >= 4) return sum;
  }
  throw InvariantError(
      "phi_of_ad series did not converge; argument norm too large");
}

}  // namespace detail

// phi(scale * ad_X) applied to Y.
//
// For Hermitian X with eigenpairs (lambda_a, v_a) the adjoint action is
// diagonal in the eigenbasis: in W = V^dag Y V the entry (a, b) picks up
// phi(scale * (lambda_a - lambda_b)). The spectral path costs one d x d
// eigensolve; non-Hermitian inputs fall back to the convergent series.
//
// When X and Y are Hermitian and scale is purely imaginary the result is
// Hermitian; this is asserted rather than enforced by symmetrization.
inline Matrix phi_of_ad(const Matrix& x, const Matrix& y, Complex scale) {
  const int d = static_cast<int>(x.rows());
  if (x.cols() != d || y.rows() != d || y.cols() != d) {
    throw InvariantError("phi_of_ad: dimension mismatch");
  }

  Matrix out;
  if (is_hermitian(x, 1e-12)) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(x);
    if (es.info() != Eigen::Success) {
      throw InvariantError("phi_of_ad: eigensolver failed");
    }
    const RealVector& lam = es.eigenvalues();
    const Matrix& v = es.eigenvectors();
    Matrix w = v.adjoint() * y * v;
    for (int a = 0; a < d; ++a) {
      for (int b = 0; b < d; ++b) {
        w(a, b) *= phi(scale * (lam(a) - lam(b)));
      }
    }
    out = v * w * v.adjoint();
  } else {
    out = detail::phi_of_ad_series(x, y, scale);
  }

  const bool inputs_hermitian = is_hermitian(x, 1e-12) && is_hermitian(y, 1e-12);
  const bool imaginary_scale = std::abs(scale.real()) <= 1e-15 * std::abs(scale);
  if (inputs_hermitian && (imaginary_scale || scale == Complex{0.0, 0.0})) {
    require_hermitian(out, 1e-10, "phi_of_ad output");
  }
  return out;
}

// <psi| A |psi>.
inline Complex expectation(const Vector& psi, const Matrix& a) {
  return (psi.adjoint() * a * psi)(0, 0);
}

}  // namespace cq
