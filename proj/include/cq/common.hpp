// Shared numeric types, error hierarchy, and Hermiticity helpers.
#pragma once

#include <Eigen/Dense>
#include <complex>
#include <stdexcept>
#include <string>

namespace cq {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

inline constexpr Complex kI{0.0, 1.0};
inline constexpr double kPi = 3.14159265358979323846;

// Base for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// File or stream problems (missing paths, short reads, bad magic bytes).
class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what) {}
};

// User-facing configuration problems. Messages carry a JSON-pointer-style
// path to the offending key, e.g. "/model/lambda: expected number >= 0".
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

// A mathematical invariant failed at runtime (lost Hermiticity, a
// positivity condition violated, an unstable integration).
class InvariantError : public Error {
 public:
  explicit InvariantError(const std::string& what) : Error(what) {}
};

// Frobenius distance from a matrix to its own adjoint.
inline double hermiticity_defect(const Matrix& m) {
  return (m - m.adjoint()).norm();
}

inline bool is_hermitian(const Matrix& m, double tol = 1e-12) {
  double scale = std::max(1.0, m.norm());
  return hermiticity_defect(m) <= tol * scale;
}

// Throws InvariantError if m is not Hermitian within tol (relative to norm).
inline void require_hermitian(const Matrix& m, double tol,
                              const std::string& what) {
  if (!is_hermitian(m, tol)) {
    throw InvariantError(what + ": Hermiticity defect " +
                         std::to_string(hermiticity_defect(m)) +
                         " exceeds tolerance");
  }
}

inline Matrix hermitian_part(const Matrix& m) {
  return 0.5 * (m + m.adjoint());
}

// Largest singular value of a Hermitian matrix = max |eigenvalue|.
inline double spectral_norm_hermitian(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline Matrix identity(int dim) { return Matrix::Identity(dim, dim); }

}  // namespace cq
