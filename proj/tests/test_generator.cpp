#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <random>

#include "cq/generator.hpp"
#include "test_helpers.hpp"

using namespace cq;

TEST_CASE("cnm reproduces the printed triangle rows") {
  // Rows k = n + m, read as C(k,0), C(k-1,1), ..., C(0,k).
  const std::array<std::array<std::int64_t, 7>, 7> rows = {{
      {0, 0, 0, 0, 0, 0, 0},
      {1, -1, 0, 0, 0, 0, 0},
      {2, 0, -2, 0, 0, 0, 0},
      {3, 2, -2, -3, 0, 0, 0},
      {4, 5, 0, -5, -4, 0, 0},
      {5, 9, 5, -5, -9, -5, 0},
      {6, 14, 14, 0, -14, -14, -6},
  }};
  for (int k = 0; k <= 6; ++k) {
    for (int i = 0; i <= k; ++i) {
      CHECK(cnm(k - i, i) == rows[k][i]);
    }
  }
}

TEST_CASE("cnm satisfies antisymmetry, boundary, and recurrence") {
  for (int n = 0; n <= 20; ++n) {
    for (int m = 0; m <= 20; ++m) {
      CHECK(cnm(n, m) == -cnm(m, n));
      if (n >= 1 && m >= 1) {
        CHECK(cnm(n, m) == cnm(n - 1, m) + cnm(n, m - 1));
      }
    }
    CHECK(cnm(n, 0) == n);
  }
  CHECK_THROWS_AS(cnm(-1, 0), InvariantError);
  CHECK_THROWS_AS(cnm(40, 40), InvariantError);
}

TEST_CASE("noise matrices satisfy and saturate the trade-off") {
  std::mt19937 gen(7);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 25; ++trial) {
    Params pr;
    pr.E = std::pow(10.0, u(gen));
    pr.s = std::pow(10.0, u(gen));
    DMatrices m = d_matrices(pr);

    // Exact saturation: D0 equals D1^dag D2^{-1} D1.
    Matrix reconstructed = m.d1.adjoint() * m.d2.inverse() * m.d1;
    CHECK((m.d0 - reconstructed).norm() < 1e-12 * m.d0.norm());

    TradeoffReport rep = tradeoff_check(m.d0, m.d1, m.d2);
    CHECK(rep.satisfied);
    CHECK(std::abs(rep.positivity_margin) < 1e-10 * std::max(1.0, m.d0.norm()));
    CHECK(rep.range_defect < 1e-12 * std::max(1.0, m.d1.norm()));
  }
}

TEST_CASE("purely Hamiltonian coupling fails the range condition") {
  // Zero diffusion with a nonzero drift block cannot be completed to a
  // positive generator: this is the classical-quantum no-go.
  Matrix d0 = Matrix::Zero(2, 2);
  Matrix d1 = 0.5 * identity(2);
  Matrix d2 = Matrix::Zero(2, 2);
  TradeoffReport rep = tradeoff_check(d0, d1, d2);
  CHECK_FALSE(rep.satisfied);
  CHECK(rep.range_defect > 0.1);
}

TEST_CASE("inflating D0 keeps the check satisfied but not saturated") {
  Params pr;
  pr.E = 0.7;
  pr.s = 1.3;
  DMatrices m = d_matrices(pr);
  Matrix inflated = m.d0 + 0.5 * identity(2);
  TradeoffReport rep = tradeoff_check(inflated, m.d1, m.d2);
  CHECK(rep.satisfied);
  CHECK(rep.positivity_margin > 0.4);
}

TEST_CASE("lindblad fields reduce to plain derivatives for commuting models") {
  Params pr;
  pr.hbar = 0.7;
  pr.E = 0.31;
  pr.s = 1.2;
  QubitLinear ham(1.4, 0.6);
  LindbladPair l = lindblad_ops(ham, pr, 0.8, -0.5);
  CHECK((l.l_q - ham.dq(0.8, -0.5)).norm() < 1e-13);
  CHECK((l.l_p - ham.dp(0.8, -0.5)).norm() < 1e-13);
}

TEST_CASE("effective Hamiltonian for the linear qubit is exact") {
  Params pr;
  pr.hbar = 0.9;
  pr.E = 0.4;
  pr.s = 1.1;
  const double mass = 1.7;
  QubitLinear ham(mass, 0.6);
  Matrix he = h_eff(ham, pr, 0.3, 0.2);
  Matrix expected =
      pr.hbar / (4.0 * pr.s * pr.s * mass) * identity(2);
  CHECK((he - expected).norm() < 1e-9);
}

TEST_CASE("effective Hamiltonian for a lone particle is scalar") {
  Params pr;
  pr.hbar = 0.5;
  pr.E = 0.8;
  pr.s = 0.9;
  SingleSystem ham(1.3, Potential{2.0, 0.4});
  double q = 0.7, p = -0.2;
  Matrix he = h_eff(ham, pr, q, p);
  double expected = pr.hbar * pr.s * pr.s / 4.0 * (2.0 + 3.0 * 0.4 * q * q) +
                    pr.hbar / (4.0 * pr.s * pr.s * 1.3);
  CHECK(std::abs(he(0, 0).real() - expected) < 1e-8);
  CHECK(std::abs(he(0, 0).imag()) < 1e-12);
}

TEST_CASE("oscillator closed forms match the series construction") {
  // Padding absorbs truncation artifacts; compare on the inner block.
  const int inner = 8, pad = 10;
  const double hbar = 0.4, m_c = 1.2, m_q = 0.9, lambda = 0.8;
  Params pr;
  pr.hbar = hbar;
  pr.s = 1.3;
  // Choose E so that y = hbar * omega / E is moderately large.
  const double omega = std::sqrt(2.0 * lambda / m_q);
  pr.E = hbar * omega / 0.45;

  CoupledOscillators ham(m_c, m_q, lambda, inner + pad, hbar);
  const double q = 0.6, p = -0.8;

  LindbladPair l = lindblad_ops(ham, pr, q, p, /*prefer_closed_form=*/false);
  HeffOptions series_only;
  series_only.prefer_closed_form = false;
  Matrix he = h_eff(ham, pr, q, p, series_only);
  HoClosedForms ref = ho_closed_forms(ham, pr, q, p);

  auto rel_block_err = [&](const Matrix& got, const Matrix& want) {
    Matrix diff = got.topLeftCorner(inner, inner) -
                  want.topLeftCorner(inner, inner);
    return diff.norm() / want.topLeftCorner(inner, inner).norm();
  };
  CHECK(rel_block_err(l.l_q, ref.l_q) < 1e-9);
  CHECK(rel_block_err(l.l_p, ref.l_p) < 1e-12);
  CHECK(rel_block_err(he, ref.h_eff) < 1e-7);
}

TEST_CASE("deep quantum regime dispatches to the closed effective form") {
  // y = hbar * omega / E ~ 42: far outside the series' exact-coefficient
  // budget, but the model's closed form evaluates everywhere.
  Params pr;
  pr.hbar = 0.3;
  pr.E = 0.01;
  CoupledOscillators ham(1.0, 1.0, 1.0, 8, pr.hbar);
  Matrix he = h_eff(ham, pr, 0.8, 0.5);
  CHECK(he.allFinite());
  CHECK((he - *ham.closed_form_h_eff(pr, 0.8, 0.5)).norm() < 1e-12);

  HeffOptions series_only;
  series_only.prefer_closed_form = false;
  CHECK_THROWS_AS(h_eff(ham, pr, 0.8, 0.5, series_only), Error);
}

TEST_CASE("oscillator Lindblad field recovers the classical force as hbar -> 0") {
  // The leading residual comes from the momentum term, whose operator norm
  // scales like hbar^(3/2); check both smallness and the scaling exponent.
  const double m_q = 1.0, lambda = 0.9, q = 1.1;
  auto residual = [&](double hbar) {
    Params pr;
    pr.hbar = hbar;
    pr.E = 0.5;
    CoupledOscillators ham(1.0, m_q, lambda, 10, hbar);
    HoClosedForms ref = ho_closed_forms(ham, pr, q, 0.0);
    Matrix classical =
        2.0 * lambda * (q * identity(10) - ham.quantum_position());
    return (ref.l_q - classical).norm() / classical.norm();
  };
  double r_coarse = residual(1e-4);
  double r_fine = residual(1e-6);
  CHECK(r_fine < 1e-7);
  double order = std::log(r_coarse / r_fine) / std::log(100.0);
  CHECK(order > 1.3);
  CHECK(order < 1.7);
}

TEST_CASE("subleading H1 shifts the effective Hamiltonian by its phi image") {
  Params pr;
  pr.hbar = 0.6;
  pr.E = 0.8;
  pr.s = 1.0;
  const double q = 0.4, p = 0.3;
  QubitLinear plain(1.0, 0.7);
  QubitLinear with_h1(1.0, 0.7, 0.35);

  GeneratorData g0 = assemble(plain, pr, q, p);
  GeneratorData g1 = assemble(with_h1, pr, q, p);

  Matrix k = h1_correction(plain.h(q, p), with_h1.h1(q, p), pr.E);
  CHECK((g1.h_eff - (g0.h_eff + pr.hbar * k)).norm() < 1e-10);
  CHECK((g1.h - (g0.h + pr.hbar * with_h1.h1(q, p))).norm() < 1e-13);

  // phi(0) = 1: an infinitely stiff backaction scale reproduces H1 itself.
  Matrix k_limit = h1_correction(plain.h(q, p), with_h1.h1(q, p), 1e12);
  CHECK((k_limit - with_h1.h1(q, p)).norm() < 1e-9);
}

TEST_CASE("assemble validates and returns a coherent bundle") {
  Params pr;
  pr.hbar = 0.8;
  pr.E = 0.6;
  pr.s = 1.4;
  QubitTransverse ham(1.0, 0.5, 0.4);
  GeneratorData g = assemble(ham, pr, 0.2, -0.3);
  CHECK(is_hermitian(g.h));
  CHECK(is_hermitian(g.h_eff));
  CHECK(g.l_q.rows() == 2);
  CHECK(tradeoff_check(g.d0, g.d1, g.d2).satisfied);

  Params bad;
  bad.E = -1.0;
  CHECK_THROWS_AS(assemble(ham, bad, 0.0, 0.0), ConfigError);
}
