// Builders for the hybrid master-equation generator: Lindblad fields from
// phi of the adjoint action, the effective Hamiltonian correction, the
// noise/backaction matrices, and the positivity trade-off check.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cq/hamiltonian.hpp"
#include "cq/operator_algebra.hpp"

namespace cq {

namespace detail {

inline std::int64_t binomial_i64(int n, int k) {
  if (k < 0 || k > n) return 0;
  if (k > n - k) k = n - k;
  unsigned __int128 res = 1;
  for (int i = 1; i <= k; ++i) {
    res = res * static_cast<unsigned>(n - k + i) / static_cast<unsigned>(i);
  }
  if (res > static_cast<unsigned __int128>(INT64_MAX)) {
    throw InvariantError("binomial coefficient overflows 64-bit range");
  }
  return static_cast<std::int64_t>(res);
}

}  // namespace detail

// Antisymmetric integer coefficients of the mixed-derivative series in the
// effective Hamiltonian. Closed form:
//   C(n, m) = binom(n+m+1, m+1) - binom(n+m+1, n+1).
// They satisfy C(n, m) = -C(m, n), C(n, 0) = n, and the Pascal-style
// recurrence C(n, m) = C(n-1, m) + C(n, m-1) away from the boundary.
inline std::int64_t cnm(int n, int m) {
  if (n < 0 || m < 0) throw InvariantError("cnm: indices must be >= 0");
  if (n + m + 1 > 62) {
    throw InvariantError("cnm: n + m too large for exact 64-bit evaluation");
  }
  return detail::binomial_i64(n + m + 1, m + 1) -
         detail::binomial_i64(n + m + 1, n + 1);
}

struct LindbladPair {
  Matrix l_q;
  Matrix l_p;
};

// Lindblad fields L_z = phi(ad_{-i H / E})(dH/dz) for z in {q, p}.
inline LindbladPair lindblad_ops(const Hamiltonian& ham, const Params& pr,
                                 double q, double p,
                                 bool prefer_closed_form = true) {
  if (prefer_closed_form) {
    if (auto ops = ham.closed_form_lindblad(pr, q, p)) {
      return LindbladPair{std::move(ops->l_q), std::move(ops->l_p)};
    }
  }
  const Complex scale = -kI / pr.E;
  Matrix h = ham.h(q, p);
  LindbladPair out;
  out.l_q = phi_of_ad(h, ham.dq(q, p), scale);
  out.l_p = phi_of_ad(h, ham.dp(q, p), scale);
  return out;
}

struct HeffOptions {
  double series_tol = 1e-14;  // shell cutoff relative to the running sum
  int max_shell = 80;         // shells n + m = 0 .. max_shell
  double fd_step = 1e-5;      // phase-space step for the dL/dz derivatives
  // Use a model-supplied exact expression when one exists.  Disable to
  // force the generic series (e.g. to cross-check it against the closed
  // form inside its convergence range).
  bool prefer_closed_form = true;
};

// Effective Hamiltonian correction
//   H_eff = (hbar s^2 / 4) dL_q/dq + (hbar / 4 s^2) dL_p/dp
//         + (hbar / 4E) sum_{n,m} C(n,m)/(n+m+2)!
//                       { ad^n(dH/dp), ad^m(dH/dq) }_+
// with ad = ad_{-i H / E}. The phase-space derivatives of the Lindblad
// fields are evaluated by central differences; the operator series is
// summed shell by shell in n + m until it stops contributing.
inline Matrix h_eff(const Hamiltonian& ham, const Params& pr, double q,
                    double p, const HeffOptions& opt = {}) {
  if (opt.prefer_closed_form) {
    if (std::optional<Matrix> closed = ham.closed_form_h_eff(pr, q, p)) {
      require_hermitian(*closed, 1e-9, "h_eff (closed form)");
      return hermitian_part(*closed);
    }
  }
  const int d = ham.dim();
  const Complex scale = -kI / pr.E;
  const double s2 = pr.s * pr.s;

  // dL_q/dq and dL_p/dp by central differences.
  const double dq_step = opt.fd_step * std::max(1.0, std::abs(q));
  const double dp_step = opt.fd_step * std::max(1.0, std::abs(p));
  Matrix dlq_dq =
      (lindblad_ops(ham, pr, q + dq_step, p, opt.prefer_closed_form).l_q -
       lindblad_ops(ham, pr, q - dq_step, p, opt.prefer_closed_form).l_q) /
      (2.0 * dq_step);
  Matrix dlp_dp =
      (lindblad_ops(ham, pr, q, p + dp_step, opt.prefer_closed_form).l_p -
       lindblad_ops(ham, pr, q, p - dp_step, opt.prefer_closed_form).l_p) /
      (2.0 * dp_step);

  Matrix acc = pr.hbar * s2 / 4.0 * dlq_dq + pr.hbar / (4.0 * s2) * dlp_dp;

  // Mixed series: precompute (scale ad_H)^k applied to both derivatives,
  // one power per shell, and accumulate anticommutators.
  Matrix h = ham.h(q, p);
  std::vector<Matrix> an;  // (scale ad)^n dH/dp
  std::vector<Matrix> bm;  // (scale ad)^m dH/dq
  an.push_back(ham.dp(q, p));
  bm.push_back(ham.dq(q, p));

  const double prefactor = pr.hbar / (4.0 * pr.E);
  double factorial = 2.0;  // (k + 2)! for k = 0
  int quiet_shells = 0;
  for (int k = 0; k <= opt.max_shell; ++k) {
    if (k > 0) {
      an.push_back(scale * commutator(h, an.back()));
      bm.push_back(scale * commutator(h, bm.back()));
      factorial *= static_cast<double>(k + 2);
    }
    Matrix shell = Matrix::Zero(d, d);
    for (int n = 0; n <= k; ++n) {
      const int m = k - n;
      const std::int64_t c = cnm(n, m);
      if (c == 0) continue;
      shell += (static_cast<double>(c) / factorial) *
               anticommutator(an[n], bm[m]);
    }
    shell *= prefactor;
    acc += shell;
    const double ref = std::max(1.0, acc.norm());
    if (shell.norm() <= opt.series_tol * ref) {
      if (++quiet_shells >= 2 && k >= 6) break;
    } else {
      quiet_shells = 0;
    }
    if (k == opt.max_shell) {
      throw InvariantError(
          "h_eff: mixed-derivative series did not converge; the "
          "quantum-dominant regime needs a closed-form evaluation");
    }
  }

  require_hermitian(acc, 1e-9, "h_eff");
  return hermitian_part(acc);
}

// First-order correction from a subleading Hamiltonian term H1:
// K = phi(ad_{-i H0 / E})(H1). The assembled generator shifts the
// effective Hamiltonian by hbar * K.
inline Matrix h1_correction(const Matrix& h0, const Matrix& h1, double E) {
  return phi_of_ad(h0, h1, -kI / E);
}

struct DMatrices {
  Matrix d0;  // decoherence block, Hermitian PSD
  Matrix d1;  // drift coupling block
  Matrix d2;  // classical diffusion block, real PSD
};

// Canonical noise matrices in the (q, p) component ordering.
inline DMatrices d_matrices(const Params& pr) {
  const double s2 = pr.s * pr.s;
  DMatrices m;
  m.d0 = Matrix(2, 2);
  m.d0 << s2 / (2.0 * pr.E), -kI / (2.0 * pr.E),
          kI / (2.0 * pr.E), 1.0 / (2.0 * pr.E * s2);
  m.d1 = Matrix(2, 2);
  m.d1 << kI * s2 / 2.0, 0.5,
          -0.5, kI / (2.0 * s2);
  m.d2 = Matrix(2, 2);
  m.d2 << pr.E * s2, 0.0,
          0.0, pr.E / s2;
  return m;
}

struct TradeoffReport {
  bool satisfied = false;
  // Smallest eigenvalue of D0 - D1^dag D2^+ D1; >= 0 (up to round-off)
  // when the decoherence-diffusion trade-off holds, 0 when saturated.
  double positivity_margin = 0.0;
  // || (I - D2 D2^+) D1 ||: nonzero means D1 couples along directions
  // with no classical diffusion, which no choice of D0 can repair.
  double range_defect = 0.0;
};

// Complete-positivity check of the noise blocks: D0 >= D1^dag D2^+ D1
// together with the range condition (I - D2 D2^+) D1 = 0.
inline TradeoffReport tradeoff_check(const Matrix& d0, const Matrix& d1,
                                     const Matrix& d2,
                                     double pinv_cutoff = 1e-12) {
  require_hermitian(d0, 1e-10, "tradeoff_check: D0");
  require_hermitian(d2, 1e-10, "tradeoff_check: D2");

  Eigen::SelfAdjointEigenSolver<Matrix> es(d2);
  const RealVector& lam = es.eigenvalues();
  const Matrix& v = es.eigenvectors();
  const double lam_max = lam.cwiseAbs().maxCoeff();
  const double cut = pinv_cutoff * std::max(lam_max, 1e-300);

  RealVector inv = RealVector::Zero(lam.size());
  for (int i = 0; i < lam.size(); ++i) {
    if (lam(i) > cut) inv(i) = 1.0 / lam(i);
  }
  Matrix pinv = v * inv.asDiagonal() * v.adjoint();

  TradeoffReport rep;
  Matrix proj = identity(static_cast<int>(d2.rows())) - d2 * pinv;
  rep.range_defect = std::max((proj * d1).norm(), (d1 * proj).norm());

  Matrix residual = hermitian_part(d0 - d1.adjoint() * pinv * d1);
  Eigen::SelfAdjointEigenSolver<Matrix> res_es(residual,
                                               Eigen::EigenvaluesOnly);
  rep.positivity_margin = res_es.eigenvalues().minCoeff();

  const double d1_scale = std::max(1.0, d1.norm());
  const double d0_scale = std::max(1.0, d0.norm());
  rep.satisfied = rep.range_defect <= 1e-10 * d1_scale &&
                  rep.positivity_margin >= -1e-10 * d0_scale;
  return rep;
}

// Everything the master equation needs at one phase-space point.
struct GeneratorData {
  Matrix h;      // Hamiltonian (including any hbar * H1 part)
  Matrix h_eff;  // effective correction (including any h1_correction part)
  Matrix l_q;
  Matrix l_p;
  Matrix d0, d1, d2;
};

// Assemble and validate the full generator data at (q, p).
inline GeneratorData assemble(const Hamiltonian& ham, const Params& pr,
                              double q, double p,
                              const HeffOptions& opt = {}) {
  pr.validate();
  GeneratorData g;
  g.h = ham.h(q, p);
  require_hermitian(g.h, 1e-10, "assemble: H");

  LindbladPair l = lindblad_ops(ham, pr, q, p);
  g.l_q = std::move(l.l_q);
  g.l_p = std::move(l.l_p);

  g.h_eff = h_eff(ham, pr, q, p, opt);
  if (ham.has_h1()) {
    Matrix h1 = ham.h1(q, p);
    require_hermitian(h1, 1e-10, "assemble: H1");
    g.h_eff += pr.hbar * hermitian_part(h1_correction(g.h, h1, pr.E));
    g.h += pr.hbar * h1;
  }
  if (!g.h_eff.allFinite()) {
    throw InvariantError("assemble: non-finite effective Hamiltonian");
  }

  DMatrices d = d_matrices(pr);
  g.d0 = std::move(d.d0);
  g.d1 = std::move(d.d1);
  g.d2 = std::move(d.d2);
  TradeoffReport rep = tradeoff_check(g.d0, g.d1, g.d2);
  if (!rep.satisfied) {
    throw InvariantError("assemble: noise matrices violate the trade-off");
  }
  return g;
}

struct HoClosedForms {
  Matrix l_q;
  Matrix l_p;
  Matrix h_eff;
};

// Bundles the coupled-oscillator model's exact expressions (documented at
// their definitions) as one reference object for cross-checks against the
// generic operator-function and series machinery.
inline HoClosedForms ho_closed_forms(const CoupledOscillators& ham,
                                     const Params& pr, double q, double p) {
  auto ops = ham.closed_form_lindblad(pr, q, p);
  HoClosedForms out;
  out.l_q = std::move(ops->l_q);
  out.l_p = std::move(ops->l_p);
  out.h_eff = *ham.closed_form_h_eff(pr, q, p);
  return out;
}

}  // namespace cq
