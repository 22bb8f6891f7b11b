// Bipartite Hamiltonian models H(q, p): operator-valued functions on a
// classical phase-space point with analytic first and second derivatives.
#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>

#include "cq/common.hpp"

namespace cq {

// Scales shared by every generator: hbar, the backaction scale E, and the
// squeezing parameter s that trades position noise against momentum noise.
struct Params {
  double hbar = 1.0;
  double E = 1.0;
  double s = 1.0;

  void validate() const {
    if (!(hbar > 0)) throw ConfigError("/params/hbar: expected number > 0");
    if (!(E > 0)) throw ConfigError("/params/E: expected number > 0");
    if (!(s > 0)) throw ConfigError("/params/s: expected number > 0");
  }
};

// Interface for H(q, p) and its phase-space derivatives. All returned
// matrices must be Hermitian; dim() is constant over the phase plane.
class Hamiltonian {
 public:
  virtual ~Hamiltonian() = default;

  virtual int dim() const = 0;
  virtual std::string name() const = 0;

  // True when [H(z), H(z')] = 0 for all phase-space points z, z'.
  virtual bool self_commuting() const = 0;

  virtual Matrix h(double q, double p) const = 0;
  virtual Matrix dq(double q, double p) const = 0;   // dH/dq
  virtual Matrix dp(double q, double p) const = 0;   // dH/dp
  virtual Matrix dqq(double q, double p) const = 0;  // d2H/dq2
  virtual Matrix dpp(double q, double p) const = 0;  // d2H/dp2

  // Optional subleading term: the full Hamiltonian is H + hbar * H1.
  virtual bool has_h1() const { return false; }
  virtual Matrix h1(double /*q*/, double /*p*/) const {
    return Matrix::Zero(dim(), dim());
  }

  // Models with exact expressions for the derived operators can supply
  // them here; callers fall back to the generic operator-function and
  // series machinery otherwise.  Closed forms matter in two regimes the
  // generic path cannot reach: strongly quantum parameters (large
  // oscillation argument, outside the series' exact-coefficient budget)
  // and truncated infinite-dimensional models, where banded closed-form
  // operators truncate exactly while spectral evaluation on the truncated
  // Hamiltonian is polluted by its top levels.
  struct ClosedFormOps {
    Matrix l_q;
    Matrix l_p;
  };
  virtual std::optional<ClosedFormOps> closed_form_lindblad(
      const Params& /*pr*/, double /*q*/, double /*p*/) const {
    return std::nullopt;
  }
  virtual std::optional<Matrix> closed_form_h_eff(const Params& /*pr*/,
                                                  double /*q*/,
                                                  double /*p*/) const {
    return std::nullopt;
  }
};

using HamiltonianPtr = std::shared_ptr<const Hamiltonian>;

// Polynomial potential V(q) = 0.5 * stiffness * q^2 + 0.25 * quartic * q^4.
struct Potential {
  double stiffness = 0.0;
  double quartic = 0.0;

  double v(double q) const {
    return 0.5 * stiffness * q * q + 0.25 * quartic * q * q * q * q;
  }
  double dv(double q) const { return stiffness * q + quartic * q * q * q; }
  double d2v(double q) const { return stiffness + 3.0 * quartic * q * q; }
};

// A classical particle alone: H = (p^2 / 2m + V(q)) * I with a trivial
// one-dimensional quantum factor.
class SingleSystem final : public Hamiltonian {
 public:
  SingleSystem(double mass, Potential pot) : mass_(mass), pot_(pot) {
    if (!(mass > 0)) throw ConfigError("/model/mass: expected number > 0");
  }

  int dim() const override { return 1; }
  std::string name() const override { return "single_system"; }
  bool self_commuting() const override { return true; }

  Matrix h(double q, double p) const override {
    return scalar(p * p / (2.0 * mass_) + pot_.v(q));
  }
  Matrix dq(double q, double) const override { return scalar(pot_.dv(q)); }
  Matrix dp(double, double p) const override { return scalar(p / mass_); }
  Matrix dqq(double q, double) const override { return scalar(pot_.d2v(q)); }
  Matrix dpp(double, double) const override { return scalar(1.0 / mass_); }

 private:
  static Matrix scalar(double x) {
    Matrix m(1, 1);
    m(0, 0) = x;
    return m;
  }
  double mass_;
  Potential pot_;
};

namespace detail {

inline Matrix sigma_x() {
  Matrix m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}

inline Matrix sigma_z() {
  Matrix m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}

}  // namespace detail

// Qubit coupled linearly through sigma_z: H = p^2/2m * I + g q sigma_z
// (+ optional hbar * delta1 * sigma_x as a subleading H1 term).
// The q-dependence commutes with itself everywhere, so the family is
// self-commuting when the H1 term is absent.
class QubitLinear final : public Hamiltonian {
 public:
  QubitLinear(double mass, double coupling, double h1_gap = 0.0)
      : mass_(mass), g_(coupling), h1_gap_(h1_gap) {
    if (!(mass > 0)) throw ConfigError("/model/mass: expected number > 0");
  }

  int dim() const override { return 2; }
  std::string name() const override { return "qubit_linear"; }
  bool self_commuting() const override { return true; }

  Matrix h(double q, double p) const override {
    return p * p / (2.0 * mass_) * identity(2) + g_ * q * detail::sigma_z();
  }
  Matrix dq(double, double) const override { return g_ * detail::sigma_z(); }
  Matrix dp(double, double p) const override {
    return p / mass_ * identity(2);
  }
  Matrix dqq(double, double) const override { return Matrix::Zero(2, 2); }
  Matrix dpp(double, double) const override {
    return 1.0 / mass_ * identity(2);
  }

  bool has_h1() const override { return h1_gap_ != 0.0; }
  Matrix h1(double, double) const override {
    return h1_gap_ * detail::sigma_x();
  }

 private:
  double mass_, g_, h1_gap_;
};

// Qubit with a transverse gap: H = p^2/2m * I + g q sigma_z + gap sigma_x.
// [H(q), H(q')] != 0 once both couplings are nonzero.
class QubitTransverse final : public Hamiltonian {
 public:
  QubitTransverse(double mass, double coupling, double gap)
      : mass_(mass), g_(coupling), gap_(gap) {
    if (!(mass > 0)) throw ConfigError("/model/mass: expected number > 0");
  }

  int dim() const override { return 2; }
  std::string name() const override { return "qubit_transverse"; }
  bool self_commuting() const override { return g_ == 0.0 || gap_ == 0.0; }

  Matrix h(double q, double p) const override {
    return p * p / (2.0 * mass_) * identity(2) + g_ * q * detail::sigma_z() +
           gap_ * detail::sigma_x();
  }
  Matrix dq(double, double) const override { return g_ * detail::sigma_z(); }
  Matrix dp(double, double p) const override {
    return p / mass_ * identity(2);
  }
  Matrix dqq(double, double) const override { return Matrix::Zero(2, 2); }
  Matrix dpp(double, double) const override {
    return 1.0 / mass_ * identity(2);
  }

 private:
  double mass_, g_, gap_;
};

// Ladder-operator matrices in a truncated number basis.
struct FockOperators {
  Matrix position;  // Q
  Matrix momentum;  // P
};

// Q = sqrt(hbar / (2 m omega)) (a + a^dag),
// P = i sqrt(hbar m omega / 2) (a^dag - a) on a dim-dimensional truncation.
inline FockOperators fock_operators(int dim, double hbar, double mass,
                                    double omega) {
  if (dim < 1) throw ConfigError("/model/fock_dim: expected integer >= 1");
  Matrix a = Matrix::Zero(dim, dim);
  for (int n = 1; n < dim; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
  Matrix adag = a.adjoint();
  FockOperators ops;
  ops.position = std::sqrt(hbar / (2.0 * mass * omega)) * (a + adag);
  ops.momentum = kI * std::sqrt(hbar * mass * omega / 2.0) * (adag - a);
  return ops;
}

// Classical particle harmonically tethered to a quantum oscillator:
// H = p^2/(2 m_c) I + P^2/(2 m_q) + lambda (q I - Q)^2
// in a Fock-space truncation of dimension dim. The natural quantum
// frequency is omega = sqrt(2 lambda / m_q).
namespace detail {

struct TrigRatios {
  double sinc;  // sin(y) / y
  double cos2;  // (1 - cos y) / y^2
  double sin3;  // (y - sin y) / y^3
};

inline TrigRatios trig_ratios(double y) {
  TrigRatios t;
  const double y2 = y * y;
  if (std::abs(y) < 0.02) {
    // Series through y^4; next terms are O(y^6), far below round-off here.
    t.sinc = 1.0 - y2 / 6.0 + y2 * y2 / 120.0;
    t.cos2 = 0.5 - y2 / 24.0 + y2 * y2 / 720.0;
    t.sin3 = 1.0 / 6.0 - y2 / 120.0 + y2 * y2 / 5040.0;
  } else {
    t.sinc = std::sin(y) / y;
    t.cos2 = (1.0 - std::cos(y)) / y2;
    t.sin3 = (y - std::sin(y)) / (y2 * y);
  }
  return t;
}

}  // namespace detail

class CoupledOscillators final : public Hamiltonian {
 public:
  CoupledOscillators(double m_c, double m_q, double lambda, int dim,
                     double hbar)
      : m_c_(m_c), m_q_(m_q), lambda_(lambda), dim_(dim) {
    if (!(m_c > 0)) throw ConfigError("/model/m_c: expected number > 0");
    if (!(m_q > 0)) throw ConfigError("/model/m_q: expected number > 0");
    if (!(lambda >= 0)) {
      throw ConfigError("/model/lambda: expected number >= 0");
    }
    if (dim < 2) throw ConfigError("/model/fock_dim: expected integer >= 2");
    omega_ = std::sqrt(2.0 * lambda / m_q);
    if (omega_ <= 0) {
      throw ConfigError("/model/lambda: expected number > 0 for oscillators");
    }
    FockOperators ops = fock_operators(dim, hbar, m_q, omega_);
    qop_ = ops.position;
    pop_ = ops.momentum;
    kinetic_q_ = pop_ * pop_ / (2.0 * m_q);
  }

  int dim() const override { return dim_; }
  std::string name() const override { return "coupled_oscillators"; }
  bool self_commuting() const override { return false; }

  double omega() const { return omega_; }
  double classical_mass() const { return m_c_; }
  double quantum_mass() const { return m_q_; }
  double coupling() const { return lambda_; }
  const Matrix& quantum_position() const { return qop_; }
  const Matrix& quantum_momentum() const { return pop_; }

  Matrix h(double q, double p) const override {
    Matrix a = q * identity(dim_) - qop_;
    return p * p / (2.0 * m_c_) * identity(dim_) + kinetic_q_ +
           lambda_ * a * a;
  }
  Matrix dq(double q, double) const override {
    return 2.0 * lambda_ * (q * identity(dim_) - qop_);
  }
  Matrix dp(double, double p) const override {
    return p / m_c_ * identity(dim_);
  }
  Matrix dqq(double, double) const override {
    return 2.0 * lambda_ * identity(dim_);
  }
  Matrix dpp(double, double) const override {
    return 1.0 / m_c_ * identity(dim_);
  }

  // Exact derived operators.  With omega = sqrt(2 lambda / m_q),
  // y = hbar omega / E, a = hbar / (E m_q), and A = q I - Q:
  //   L_q   = 2 lambda sinc(y) A + (E / hbar)(1 - cos y) P
  //   L_p   = (p / m_c) I
  //   H_eff = [ (hbar s^2 / 2) lambda sinc(y) + hbar / (4 s^2 m_c) ] I
  //         + (hbar lambda p / (E m_c)) [ gI(y) A + a gM(y) P ]
  // where gI(y) = 2 (1 - cos y)/y^2 - sinc(y)
  // and   gM(y) = 2 (y - sin y)/y^3 - (1 - cos y)/y^2.
  // Valid at every y, unlike the generic series, which is limited to
  // moderate y by its exact-integer coefficient table; and exact on the
  // truncated Fock block, since A and P are banded.
  std::optional<ClosedFormOps> closed_form_lindblad(
      const Params& pr, double q, double p) const override {
    const double y = pr.hbar * omega_ / pr.E;
    const detail::TrigRatios t = detail::trig_ratios(y);
    ClosedFormOps ops;
    // (E / hbar)(1 - cos y) = (hbar omega^2 / E) cos2(y), cancellation-free.
    const double p_coef = pr.hbar * omega_ * omega_ / pr.E * t.cos2;
    ops.l_q = 2.0 * lambda_ * t.sinc * (q * identity(dim_) - qop_) +
              p_coef * pop_;
    ops.l_p = p / m_c_ * identity(dim_);
    return ops;
  }

  std::optional<Matrix> closed_form_h_eff(const Params& pr, double q,
                                          double p) const override {
    const double y = pr.hbar * omega_ / pr.E;
    const double a = pr.hbar / (pr.E * m_q_);
    const double s2 = pr.s * pr.s;
    const detail::TrigRatios t = detail::trig_ratios(y);
    const double g_i = 2.0 * t.cos2 - t.sinc;
    const double g_m = 2.0 * t.sin3 - t.cos2;
    const Matrix a_op = q * identity(dim_) - qop_;
    const double id_coef = pr.hbar * s2 / 2.0 * lambda_ * t.sinc +
                           pr.hbar / (4.0 * s2 * m_c_);
    return Matrix(id_coef * identity(dim_) +
                  pr.hbar * lambda_ * p / (pr.E * m_c_) *
                      (g_i * a_op + a * g_m * pop_));
  }

 private:
  double m_c_, m_q_, lambda_, omega_;
  int dim_;
  Matrix qop_, pop_, kinetic_q_;
};

}  // namespace cq
