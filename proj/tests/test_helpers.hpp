// Shared helpers for the unit tests: deterministic random matrices.
#pragma once

#include <random>

#include "cq/common.hpp"

namespace cqtest {

inline cq::Matrix random_complex(int d, std::mt19937& gen) {
  std::normal_distribution<double> n(0.0, 1.0);
  cq::Matrix m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = cq::Complex{n(gen), n(gen)};
  return m;
}

inline cq::Matrix random_hermitian(int d, std::mt19937& gen) {
  cq::Matrix m = random_complex(d, gen);
  return cq::Matrix(0.5 * (m + m.adjoint()));
}

inline cq::Matrix pauli_x() {
  cq::Matrix m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}

inline cq::Matrix pauli_y() {
  cq::Matrix m(2, 2);
  m << 0, cq::Complex{0, -1}, cq::Complex{0, 1}, 0;
  return m;
}

inline cq::Matrix pauli_z() {
  cq::Matrix m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}

}  // namespace cqtest
