// Deterministic PDE evolution of operator-valued phase-space fields:
// the full hybrid generator, its limiting and reference forms, explicit
// RK4 stepping with stability-derived step control and an optional
// unitary split-off, and smoothing-based product-formula steps.
#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "cq/generator.hpp"
#include "cq/phase_space.hpp"

namespace cq {

enum class GeneratorKind {
  main_cq,         // full completely-positive hybrid generator
  liouville,       // pointwise von Neumann term only
  qcle,            // classical transport with symmetrized backreaction
  husimi_h0,       // smoothing-ordered expansion of the hybrid generator
  glauber_h0,      // anti-smoothing-ordered expansion
  self_commuting,  // exact closed form valid for self-commuting families
  fokker_planck,   // classical advection-diffusion (dim 1 only)
};

inline std::string to_string(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::main_cq: return "main_cq";
    case GeneratorKind::liouville: return "liouville";
    case GeneratorKind::qcle: return "qcle";
    case GeneratorKind::husimi_h0: return "husimi_h0";
    case GeneratorKind::glauber_h0: return "glauber_h0";
    case GeneratorKind::self_commuting: return "self_commuting";
    case GeneratorKind::fokker_planck: return "fokker_planck";
  }
  throw InvariantError("unknown generator kind");
}

inline GeneratorKind generator_kind_from_string(const std::string& name) {
  for (GeneratorKind k :
       {GeneratorKind::main_cq, GeneratorKind::liouville, GeneratorKind::qcle,
        GeneratorKind::husimi_h0, GeneratorKind::glauber_h0,
        GeneratorKind::self_commuting, GeneratorKind::fokker_planck}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("/generator: unknown kind '" + name +
                    "' (expected main_cq, liouville, qcle, husimi_h0, "
                    "glauber_h0, self_commuting, or fokker_planck)");
}

namespace detail {

inline double traceless_spectral_norm(const Matrix& m) {
  const int d = static_cast<int>(m.rows());
  Matrix t = m - m.trace() / static_cast<double>(d) * identity(d);
  return spectral_norm_hermitian(hermitian_part(t));
}

}  // namespace detail

// Point-sampled generator ingredients over a grid, built once per
// (model, parameters, kind) and reused across the whole evolution.
struct EvolverCache {
  GeneratorKind kind;
  Params params;
  PhaseGrid grid;
  int dim = 0;

  OperatorField h;         // bare Hamiltonian samples
  OperatorField h_unitary; // operator conjugated out when splitting
  OperatorField dq, dp;    // analytic dH/dq, dH/dp
  OperatorField dqq, dpp;  // analytic second derivatives
  OperatorField l_q, l_p;  // Lindblad fields (main_cq)
  OperatorField lbar;      // combined jump operator s L_q + (i/s) L_p
  OperatorField ldl;       // lbar^dag lbar

  double speed_q = 0.0;    // advection speed bound along q
  double speed_p = 0.0;    // advection speed bound along p
  double split_norm = 0.0; // max traceless norm of h_unitary
  double residual_stiff = 0.0;  // hbar-free commutator stiffness
  bool has_diffusion = false;
};

inline EvolverCache build_evolver_cache(const Hamiltonian& ham,
                                        const Params& pr,
                                        const PhaseGrid& grid,
                                        GeneratorKind kind,
                                        const HeffOptions& heff_opt = {}) {
  pr.validate();
  grid.validate();
  const int d = ham.dim();
  if (kind == GeneratorKind::fokker_planck && d != 1) {
    throw ConfigError(
        "/generator: fokker_planck requires a one-dimensional quantum "
        "factor (single_system)");
  }
  if (kind == GeneratorKind::self_commuting && !ham.self_commuting()) {
    throw ConfigError(
        "/generator: self_commuting requires a self-commuting model");
  }

  EvolverCache c;
  c.kind = kind;
  c.params = pr;
  c.grid = grid;
  c.dim = d;
  c.h = OperatorField(grid, d);
  c.dq = OperatorField(grid, d);
  c.dp = OperatorField(grid, d);

  const bool needs_second = kind == GeneratorKind::husimi_h0 ||
                            kind == GeneratorKind::glauber_h0 ||
                            kind == GeneratorKind::self_commuting;
  if (needs_second) {
    c.dqq = OperatorField(grid, d);
    c.dpp = OperatorField(grid, d);
  }
  const bool is_main = kind == GeneratorKind::main_cq;
  if (is_main) {
    c.h_unitary = OperatorField(grid, d);
    c.l_q = OperatorField(grid, d);
    c.l_p = OperatorField(grid, d);
  }
  const bool has_dissipator = is_main || kind == GeneratorKind::self_commuting;
  if (has_dissipator) {
    c.lbar = OperatorField(grid, d);
    c.ldl = OperatorField(grid, d);
  }
  c.has_diffusion = is_main || kind == GeneratorKind::self_commuting ||
                    kind == GeneratorKind::fokker_planck;

  // The canonical noise matrices hold uniformly; check them once.
  if (is_main) {
    DMatrices dm = d_matrices(pr);
    if (!tradeoff_check(dm.d0, dm.d1, dm.d2).satisfied) {
      throw InvariantError("build_evolver_cache: trade-off violated");
    }
  }

  const double s = pr.s, s2 = s * s;
  for (int i = 0; i < grid.n_q; ++i) {
    const double q = grid.q(i);
    for (int j = 0; j < grid.n_p; ++j) {
      const double p = grid.p(j);
      Matrix h = ham.h(q, p);
      Matrix dhq = ham.dq(q, p);
      Matrix dhp = ham.dp(q, p);
      c.h.at(i, j) = h;
      c.dq.at(i, j) = dhq;
      c.dp.at(i, j) = dhp;
      if (needs_second) {
        c.dqq.at(i, j) = ham.dqq(q, p);
        c.dpp.at(i, j) = ham.dpp(q, p);
      }

      Matrix trans_q, trans_p;  // operators driving q/p advection
      if (is_main) {
        LindbladPair l = lindblad_ops(ham, pr, q, p);
        Matrix he = h_eff(ham, pr, q, p, heff_opt);
        Matrix h_full = h;
        if (ham.has_h1()) {
          Matrix h1 = ham.h1(q, p);
          he += pr.hbar * hermitian_part(h1_correction(h, h1, pr.E));
          h_full += pr.hbar * h1;
        }
        c.h_unitary.at(i, j) = h_full + he;
        c.l_q.at(i, j) = l.l_q;
        c.l_p.at(i, j) = l.l_p;
        Matrix lbar = s * l.l_q + kI / s * l.l_p;
        c.lbar.at(i, j) = lbar;
        c.ldl.at(i, j) = lbar.adjoint() * lbar;
        trans_q = l.l_p;
        trans_p = l.l_q;
        c.split_norm = std::max(
            c.split_norm, detail::traceless_spectral_norm(c.h_unitary.at(i, j)));
      } else {
        trans_q = dhp;
        trans_p = dhq;
        if (kind == GeneratorKind::self_commuting) {
          Matrix lbar = s * dhq + kI / s * dhp;
          c.lbar.at(i, j) = lbar;
          c.ldl.at(i, j) = lbar.adjoint() * lbar;
        }
        c.split_norm =
            std::max(c.split_norm, detail::traceless_spectral_norm(h));
      }

      const double nq = spectral_norm_hermitian(hermitian_part(trans_q));
      const double np = spectral_norm_hermitian(hermitian_part(trans_p));
      double sq = nq, sp = np;
      // Commutator transport terms advect at s^2 |L_q| in q, |L_p|/s^2 in p.
      if (is_main || needs_second) {
        sq += s2 * detail::traceless_spectral_norm(trans_p);
        sp += detail::traceless_spectral_norm(trans_q) / s2;
      }
      if (kind != GeneratorKind::liouville) {
        c.speed_q = std::max(c.speed_q, sq);
        c.speed_p = std::max(c.speed_p, sp);
      }
      if (needs_second) {
        c.residual_stiff = std::max(
            c.residual_stiff,
            detail::traceless_spectral_norm(
                s2 / 4.0 * c.dqq.at(i, j) + 1.0 / (4.0 * s2) * c.dpp.at(i, j)));
      }
    }
  }
  if (!is_main) c.h_unitary = c.h;
  return c;
}

// One application of the generator. skip_unitary leaves out the
// -(i/hbar)[h_unitary, rho] term, which the split-step integrator
// handles by exact conjugation instead.
inline OperatorField apply_generator(const EvolverCache& c,
                                     const OperatorField& rho,
                                     bool skip_unitary = false) {
  rho.check_compatible(c.h);
  const PhaseGrid& g = c.grid;
  const Params& pr = c.params;
  const double s2 = pr.s * pr.s;
  const Complex unit_pref = -kI / pr.hbar;
  const int d = c.dim;

  OperatorField out(g, d);
  Matrix m(d, d), tmp(d, d);

  auto add_diffusion = [&]() {
    OperatorField d2q = fd_deriv(rho, Axis::q, 2);
    OperatorField d2p = fd_deriv(rho, Axis::p, 2);
    out.add_scaled(pr.E * s2 / 2.0, d2q);
    out.add_scaled(pr.E / (2.0 * s2), d2p);
  };

  switch (c.kind) {
    case GeneratorKind::liouville: {
      if (!skip_unitary) {
        for (int i = 0; i < g.n_q; ++i) {
          for (int j = 0; j < g.n_p; ++j) {
            out.at(i, j) = unit_pref * commutator(c.h.at(i, j), rho.at(i, j));
          }
        }
      }
      return out;
    }

    case GeneratorKind::main_cq: {
      OperatorField flux_q(g, d), flux_p(g, d);
      for (int i = 0; i < g.n_q; ++i) {
        for (int j = 0; j < g.n_p; ++j) {
          Matrix r = rho.at(i, j);
          Matrix lq = c.l_q.at(i, j);
          Matrix lp = c.l_p.at(i, j);
          // Flux operators whose phase-space divergence moves the weight.
          flux_q.at(i, j) =
              -0.5 * anticommutator(lp, r) +
              kI * s2 / 2.0 * commutator(lq, r);
          flux_p.at(i, j) =
              0.5 * anticommutator(lq, r) +
              kI / (2.0 * s2) * commutator(lp, r);

          Matrix lbar = c.lbar.at(i, j);
          Matrix ldl = c.ldl.at(i, j);
          m = lbar * r * lbar.adjoint();
          m -= 0.5 * (ldl * r + r * ldl);
          m /= 2.0 * pr.E;
          if (!skip_unitary) {
            m += unit_pref * commutator(c.h_unitary.at(i, j), r);
          }
          out.at(i, j) = m;
        }
      }
      OperatorField div_q = fd_deriv(flux_q, Axis::q, 1);
      OperatorField div_p = fd_deriv(flux_p, Axis::p, 1);
      out.add_scaled(1.0, div_q);
      out.add_scaled(1.0, div_p);
      add_diffusion();
      return out;
    }

    case GeneratorKind::qcle:
    case GeneratorKind::husimi_h0:
    case GeneratorKind::glauber_h0:
    case GeneratorKind::self_commuting: {
      const double sign = (c.kind == GeneratorKind::husimi_h0) ? -1.0 : 1.0;
      const bool expansion = c.kind != GeneratorKind::qcle;
      OperatorField drq = fd_deriv(rho, Axis::q, 1);
      OperatorField drp = fd_deriv(rho, Axis::p, 1);
      for (int i = 0; i < g.n_q; ++i) {
        for (int j = 0; j < g.n_p; ++j) {
          Matrix r = rho.at(i, j);
          Matrix dhq = c.dq.at(i, j);
          Matrix dhp = c.dp.at(i, j);
          m = 0.5 * anticommutator(dhq, Matrix(drp.at(i, j)));
          m -= 0.5 * anticommutator(dhp, Matrix(drq.at(i, j)));
          if (!skip_unitary) {
            m += unit_pref * commutator(c.h.at(i, j), r);
          }
          if (expansion) {
            tmp = kI * s2 / 2.0 * commutator(dhq, Matrix(drq.at(i, j)));
            tmp += kI / (2.0 * s2) * commutator(dhp, Matrix(drp.at(i, j)));
            tmp += kI * commutator(Matrix(s2 / 4.0 * c.dqq.at(i, j) +
                                          1.0 / (4.0 * s2) * c.dpp.at(i, j)),
                                   r);
            m += sign * tmp;
          }
          if (c.kind == GeneratorKind::self_commuting) {
            Matrix lbar = c.lbar.at(i, j);
            Matrix ldl = c.ldl.at(i, j);
            tmp = lbar * r * lbar.adjoint();
            tmp -= 0.5 * (ldl * r + r * ldl);
            m += tmp / (2.0 * pr.E);
          }
          out.at(i, j) = m;
        }
      }
      if (c.kind == GeneratorKind::self_commuting) add_diffusion();
      return out;
    }

    case GeneratorKind::fokker_planck: {
      OperatorField drq = fd_deriv(rho, Axis::q, 1);
      OperatorField drp = fd_deriv(rho, Axis::p, 1);
      for (int i = 0; i < g.n_q; ++i) {
        for (int j = 0; j < g.n_p; ++j) {
          out.at(i, j) = 0.5 * anticommutator(c.dq.at(i, j),
                                              Matrix(drp.at(i, j))) -
                         0.5 * anticommutator(c.dp.at(i, j),
                                              Matrix(drq.at(i, j)));
        }
      }
      add_diffusion();
      return out;
    }
  }
  throw InvariantError("apply_generator: unhandled kind");
}

struct EvolveOptions {
  double t_final = 1.0;
  double dt = 0.0;          // 0 = derive from the stability bounds
  double safety = 0.2;
  bool allow_split = true;
  double split_threshold = 0.1;  // on ||h_unitary|| dt / hbar
  double instability_factor = 10.0;
  int observe_stride = 0;   // observer cadence in steps; 0 = ends only
  long max_steps = 50000000;
};

struct EvolveResult {
  OperatorField state;
  double dt = 0.0;
  long steps = 0;
  bool used_split = false;
};

using Observer = std::function<void(double t, const OperatorField& state)>;

namespace detail {

inline double stable_dt(const EvolverCache& c, double safety,
                        bool include_unitary) {
  const PhaseGrid& g = c.grid;
  const Params& pr = c.params;
  const double s2 = pr.s * pr.s;
  double dt = std::numeric_limits<double>::infinity();
  if (c.speed_q > 0) dt = std::min(dt, g.dq() / c.speed_q);
  if (c.speed_p > 0) dt = std::min(dt, g.dp() / c.speed_p);
  if (c.has_diffusion) {
    dt = std::min(dt, g.dq() * g.dq() / (pr.E * s2));
    dt = std::min(dt, g.dp() * g.dp() * s2 / pr.E);
  }
  if (c.residual_stiff > 0) dt = std::min(dt, 1.0 / c.residual_stiff);
  if (include_unitary && c.split_norm > 0) {
    dt = std::min(dt, pr.hbar / c.split_norm);
  }
  // Dissipator relaxation rate ~ ||ldl|| / E.
  if (c.ldl.dim() > 0) {
    double rate = 0.0;
    for (int i = 0; i < g.n_q; ++i) {
      for (int j = 0; j < g.n_p; ++j) {
        rate = std::max(rate, spectral_norm_hermitian(
                                  hermitian_part(c.ldl.at(i, j))));
      }
    }
    if (rate > 0) dt = std::min(dt, 2.0 * pr.E / rate);
  }
  if (!std::isfinite(dt)) dt = 1.0;  // generator is identically zero
  return safety * dt;
}

// exp(-i h dt / (2 hbar)) at every point, for the split conjugation.
inline std::vector<Matrix> half_step_unitaries(const EvolverCache& c,
                                               double dt) {
  const PhaseGrid& g = c.grid;
  std::vector<Matrix> u;
  u.reserve(static_cast<size_t>(g.size()));
  Eigen::SelfAdjointEigenSolver<Matrix> es;
  for (int i = 0; i < g.n_q; ++i) {
    for (int j = 0; j < g.n_p; ++j) {
      Matrix h = hermitian_part(c.h_unitary.at(i, j));
      es.compute(h);
      Vector phases(h.rows());
      for (int k = 0; k < h.rows(); ++k) {
        phases(k) = std::exp(-kI * es.eigenvalues()(k) * dt /
                             (2.0 * c.params.hbar));
      }
      u.push_back(es.eigenvectors() * phases.asDiagonal() *
                  es.eigenvectors().adjoint());
    }
  }
  return u;
}

inline void conjugate_in_place(OperatorField& rho,
                               const std::vector<Matrix>& u) {
  const PhaseGrid& g = rho.grid();
  size_t idx = 0;
  Matrix tmp;
  for (int i = 0; i < g.n_q; ++i) {
    for (int j = 0; j < g.n_p; ++j, ++idx) {
      tmp = u[idx] * rho.at(i, j) * u[idx].adjoint();
      rho.at(i, j) = tmp;
    }
  }
}

}  // namespace detail

inline EvolveResult evolve(const EvolverCache& cache,
                           const OperatorField& initial,
                           const EvolveOptions& opt,
                           const Observer& observer = nullptr) {
  initial.check_compatible(cache.h);
  if (!(opt.t_final > 0)) throw ConfigError("/evolve/t_final: expected > 0");

  bool split = false;
  double dt = opt.dt;
  if (dt <= 0) {
    double dt_free = detail::stable_dt(cache, opt.safety, false);
    const bool splittable = cache.kind != GeneratorKind::fokker_planck;
    if (opt.allow_split && splittable &&
        cache.split_norm * dt_free / cache.params.hbar > opt.split_threshold) {
      split = true;
      dt = dt_free;
    } else {
      dt = detail::stable_dt(cache, opt.safety, true);
    }
  } else if (opt.allow_split &&
             cache.split_norm * dt / cache.params.hbar > opt.split_threshold &&
             cache.kind != GeneratorKind::fokker_planck) {
    split = true;
  }

  long n_steps = static_cast<long>(std::ceil(opt.t_final / dt - 1e-12));
  if (n_steps < 1) n_steps = 1;
  if (n_steps > opt.max_steps) {
    throw InvariantError(
        "evolve: stability bound needs more steps than max_steps; coarsen "
        "the grid or reduce t_final");
  }
  dt = opt.t_final / static_cast<double>(n_steps);

  std::vector<Matrix> u_half;
  if (split) u_half = detail::half_step_unitaries(cache, dt);

  OperatorField state = initial;
  OperatorField stage(state.grid(), state.dim());
  double prev_max = std::max(state.max_entry_abs(), 1e-300);

  if (observer) observer(0.0, state);

  for (long step = 0; step < n_steps; ++step) {
    if (split) detail::conjugate_in_place(state, u_half);

    OperatorField k1 = apply_generator(cache, state, split);
    stage = state;
    stage.add_scaled(dt / 2.0, k1);
    OperatorField k2 = apply_generator(cache, stage, split);
    stage = state;
    stage.add_scaled(dt / 2.0, k2);
    OperatorField k3 = apply_generator(cache, stage, split);
    stage = state;
    stage.add_scaled(dt, k3);
    OperatorField k4 = apply_generator(cache, stage, split);

    state.add_scaled(dt / 6.0, k1);
    state.add_scaled(dt / 3.0, k2);
    state.add_scaled(dt / 3.0, k3);
    state.add_scaled(dt / 6.0, k4);

    if (split) detail::conjugate_in_place(state, u_half);

    const double cur_max = state.max_entry_abs();
    if (!std::isfinite(cur_max) ||
        cur_max > opt.instability_factor * prev_max) {
      throw InvariantError(
          "evolve: field grew by more than the instability factor in one "
          "step at t = " + std::to_string((step + 1) * dt) +
          "; the configured dt or grid resolution is too coarse");
    }
    prev_max = std::max(cur_max, 1e-300);

    if (observer && opt.observe_stride > 0 &&
        (step + 1) % opt.observe_stride == 0 && step + 1 < n_steps) {
      observer((step + 1) * dt, state);
    }
  }
  if (observer) observer(opt.t_final, state);

  EvolveResult res;
  res.state = std::move(state);
  res.dt = dt;
  res.steps = n_steps;
  res.used_split = split;
  return res;
}

// Product-formula stepping: the generator is split into a smoothing part
// (exact Gaussian convolution, variance E s^2 tau in q and E tau / s^2 in p
// since the internal hbar is E tau) and a transport part integrated by RK4.
enum class TrotterOrdering { sym, pre, post };

inline std::string to_string(TrotterOrdering o) {
  switch (o) {
    case TrotterOrdering::sym: return "sym";
    case TrotterOrdering::pre: return "pre";
    case TrotterOrdering::post: return "post";
  }
  throw InvariantError("unknown ordering");
}

inline TrotterOrdering trotter_ordering_from_string(const std::string& s) {
  if (s == "sym") return TrotterOrdering::sym;
  if (s == "pre") return TrotterOrdering::pre;
  if (s == "post") return TrotterOrdering::post;
  throw ConfigError("/trotter/ordering: unknown ordering '" + s +
                    "' (expected sym, pre, or post)");
}

struct TrotterOperator {
  TrotterOrdering ordering;
  double tau = 0.0;
  Params eff;  // parameters with hbar = E * tau
  EvolverCache cache;
};

inline TrotterOperator make_trotter(const Hamiltonian& ham, const Params& pr,
                                    const PhaseGrid& grid,
                                    TrotterOrdering ordering, double tau) {
  if (!(tau > 0)) throw ConfigError("/trotter/tau: expected > 0");
  TrotterOperator op;
  op.ordering = ordering;
  op.tau = tau;
  op.eff = pr;
  op.eff.hbar = pr.E * tau;
  GeneratorKind kind = (ordering == TrotterOrdering::sym)
                           ? GeneratorKind::qcle
                           : (ordering == TrotterOrdering::pre
                                  ? GeneratorKind::husimi_h0
                                  : GeneratorKind::glauber_h0);
  op.cache = build_evolver_cache(ham, op.eff, grid, kind);
  return op;
}

inline OperatorField apply_trotter(const TrotterOperator& op,
                                   const OperatorField& state) {
  EvolveOptions eo;
  eo.t_final = op.tau;
  auto transport = [&](const OperatorField& x) {
    return evolve(op.cache, x, eo).state;
  };
  switch (op.ordering) {
    case TrotterOrdering::sym: {
      OperatorField half = weierstrass_transform(state, op.eff, 0.5);
      OperatorField moved = transport(half);
      return weierstrass_transform(moved, op.eff, 0.5);
    }
    case TrotterOrdering::pre: {
      OperatorField smooth = weierstrass_transform(state, op.eff, 1.0);
      return transport(smooth);
    }
    case TrotterOrdering::post: {
      OperatorField moved = transport(state);
      return weierstrass_transform(moved, op.eff, 1.0);
    }
  }
  throw InvariantError("apply_trotter: unhandled ordering");
}

// Integral of the pointwise trace distance between two fields.
inline double l1_distance(const OperatorField& a, const OperatorField& b) {
  a.check_compatible(b);
  const PhaseGrid& g = a.grid();
  Eigen::SelfAdjointEigenSolver<Matrix> es;
  double sum = 0.0;
  for (int i = 0; i < g.n_q; ++i) {
    for (int j = 0; j < g.n_p; ++j) {
      Matrix diff = hermitian_part(a.at(i, j) - b.at(i, j));
      es.compute(diff, Eigen::EigenvaluesOnly);
      sum += es.eigenvalues().cwiseAbs().sum();
    }
  }
  return sum * g.cell();
}

struct ConvergencePoint {
  double tau = 0.0;
  double l1_error = 0.0;
};

struct ConvergenceStudy {
  std::vector<ConvergencePoint> points;
  double slope = 0.0;      // least-squares slope of log err vs log tau
  double reference_tau = 0.0;
};

// Errors are measured against a fine-step symmetric product formula
// (tau_ref = min(taus) / 8) rather than a PDE solve: both sides then share
// the same spatial stencils, so the comparison isolates the splitting
// error in tau instead of bottoming out on spatial discretization floors.
inline ConvergenceStudy convergence_study(
    const Hamiltonian& ham, const Params& pr, const PhaseGrid& grid,
    const OperatorField& initial, double t_final,
    const std::vector<double>& taus, TrotterOrdering ordering) {
  if (taus.empty()) throw ConfigError("/trotter/taus: expected a list");
  auto steps_for = [&](double tau) {
    const double ratio = t_final / tau;
    const long n = std::lround(ratio);
    if (n < 1 || std::abs(ratio - static_cast<double>(n)) > 1e-9) {
      throw ConfigError("/trotter/taus: each tau must divide t_final");
    }
    return n;
  };

  ConvergenceStudy study;
  study.reference_tau = *std::min_element(taus.begin(), taus.end()) / 8.0;
  TrotterOperator ref_op =
      make_trotter(ham, pr, grid, TrotterOrdering::sym, study.reference_tau);
  OperatorField reference = initial;
  const long n_ref = steps_for(study.reference_tau);
  for (long k = 0; k < n_ref; ++k) reference = apply_trotter(ref_op, reference);

  for (double tau : taus) {
    const long n = steps_for(tau);
    TrotterOperator op = make_trotter(ham, pr, grid, ordering, tau);
    OperatorField state = initial;
    for (long k = 0; k < n; ++k) state = apply_trotter(op, state);
    study.points.push_back({tau, l1_distance(state, reference)});
  }

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(study.points.size());
  for (const auto& pt : study.points) {
    const double x = std::log(pt.tau);
    const double y = std::log(std::max(pt.l1_error, 1e-300));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  if (study.points.size() >= 2) {
    study.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  }
  return study;
}

}  // namespace cq
