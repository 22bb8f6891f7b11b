// Stochastic trajectory representation of the hybrid dynamics: a classical
// phase-space point driven by quantum-expectation drift plus diffusion,
// coupled to a quantum state vector driven by the matching nonlinear
// stochastic Schrodinger equation.  When the noise matrices saturate the
// decoherence-diffusion trade-off the conditional quantum state stays pure,
// which this module both exploits (state-vector trajectories) and tests
// (norm-growth diagnostics).
#pragma once

#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

#include "cq/generator.hpp"
#include "cq/phase_space.hpp"
#include "cq/rng.hpp"

namespace cq {

// Principal square root of a 2x2 real-symmetric positive-semidefinite
// diffusion matrix, so that sigma * sigma^T reproduces the input.
inline RealMatrix sigma_from_d2(const Matrix& d2, double tol = 1e-12) {
  if (d2.rows() != 2 || d2.cols() != 2) {
    throw InvariantError("sigma_from_d2: expected a 2x2 matrix");
  }
  const double scale = std::max(1.0, d2.norm());
  if (d2.imag().cwiseAbs().maxCoeff() > tol * scale ||
      hermiticity_defect(d2) > tol * scale) {
    throw InvariantError(
        "sigma_from_d2: diffusion matrix must be real symmetric");
  }
  Eigen::Matrix2d sym = 0.5 * (d2.real() + d2.real().transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(sym);
  Eigen::Vector2d lam = es.eigenvalues();
  for (int i = 0; i < 2; ++i) {
    if (lam(i) < -tol * scale) {
      throw InvariantError(
          "sigma_from_d2: diffusion matrix must be positive semidefinite");
    }
    lam(i) = std::sqrt(std::max(0.0, lam(i)));
  }
  RealMatrix sigma =
      es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  return sigma;
}

// One trajectory sample: classical point, unit quantum state, time, and the
// accumulated product of pre-renormalization squared norms.  `norm_growth`
// equals the squared norm the state would have if it were never renormalized;
// its mean staying at 1 + O(dt) is the numerical signature of trade-off
// saturation, and norm_growth^2 is the purity the unnormalized conditional
// density operator would report.
struct TrajectoryState {
  double q = 0.0;
  double p = 0.0;
  double t = 0.0;
  Vector psi;
  double norm_growth = 1.0;
};

// Classical noise: any real 2x2 factor with sigma * sigma^T equal to the
// classical diffusion block, plus the RNG identity of the trajectory.
struct NoiseModel {
  RealMatrix sigma;
  std::uint64_t rng_seed = 0;
  std::uint64_t stream_id = 0;
};

inline NoiseModel make_noise_model(const Matrix& d2, std::uint64_t seed,
                                   std::uint64_t stream) {
  return NoiseModel{sigma_from_d2(d2), seed, stream};
}

struct EmStepOptions {
  bool renormalize = true;
  double imag_drift_tol = 1e-10;
};

// One Euler-Maruyama step of the coupled SDE pair.  dw_q / dw_p are Wiener
// increments over dt (i.e. sqrt(dt) times independent standard normals).
//
//   dZ   = <D1^* L + D1 L> dt + sigma dW
//   dpsi = -(i/hbar)(H + H_eff) psi dt
//          + (L - <L>)^T D1^dag sigma^{-T} psi dW
//          - (1/2)(L - <L>)^T (D0^T L - D0 <L>) psi dt
//
// with L = (L_q, L_p)^T and <.> the normalized psi-expectation.
inline TrajectoryState em_step(const TrajectoryState& state, double dt,
                               const GeneratorData& gen, const Params& pr,
                               const NoiseModel& noise, double dw_q,
                               double dw_p, const EmStepOptions& opt = {}) {
  if (!(dt > 0.0)) throw ConfigError("/time/dt: expected number > 0");
  const auto dim = gen.h.rows();
  if (state.psi.size() != dim) {
    throw InvariantError("em_step: state dimension does not match generator");
  }
  const double nrm2 = state.psi.squaredNorm();
  if (!state.psi.allFinite() || !(nrm2 > 0.0)) {
    throw InvariantError("em_step: non-finite or zero quantum state");
  }

  const Complex ev_q = expectation(state.psi, gen.l_q) / nrm2;
  const Complex ev_p = expectation(state.psi, gen.l_p) / nrm2;

  // Classical drift: (D1 + D1^*) applied to the Lindblad expectations.
  const Matrix dsum = gen.d1 + gen.d1.conjugate();
  const Complex drift_q = dsum(0, 0) * ev_q + dsum(0, 1) * ev_p;
  const Complex drift_p = dsum(1, 0) * ev_q + dsum(1, 1) * ev_p;
  const double drift_scale =
      std::max({1.0, std::abs(drift_q), std::abs(drift_p)});
  if (std::max(std::abs(drift_q.imag()), std::abs(drift_p.imag())) >
      opt.imag_drift_tol * drift_scale) {
    throw InvariantError(
        "em_step: classical drift has a non-negligible imaginary part");
  }

  TrajectoryState out;
  out.t = state.t + dt;
  out.q = state.q + drift_q.real() * dt + noise.sigma(0, 0) * dw_q +
          noise.sigma(0, 1) * dw_p;
  out.p = state.p + drift_p.real() * dt + noise.sigma(1, 0) * dw_q +
          noise.sigma(1, 1) * dw_p;
  if (!std::isfinite(out.q) || !std::isfinite(out.p)) {
    throw InvariantError("em_step: non-finite classical point after update");
  }

  const Matrix eye = identity(static_cast<int>(dim));
  const Matrix dl_q = gen.l_q - ev_q * eye;
  const Matrix dl_p = gen.l_p - ev_p * eye;

  // Quantum noise coupling D1^dag sigma^{-T}.  A singular sigma is only
  // acceptable when there is no back-reaction (both Lindblad operators
  // proportional to the identity), in which case the centered operators
  // vanish and the coupling never acts.
  const double det = noise.sigma(0, 0) * noise.sigma(1, 1) -
                     noise.sigma(0, 1) * noise.sigma(1, 0);
  const double op_scale =
      std::max({1.0, gen.l_q.norm(), gen.l_p.norm(), state.psi.norm()});
  Matrix coupling = Matrix::Zero(2, 2);
  if (std::abs(det) > 1e-14 * std::max(1.0, noise.sigma.squaredNorm())) {
    Eigen::Matrix2d inv_t;
    inv_t << noise.sigma(1, 1), -noise.sigma(1, 0), -noise.sigma(0, 1),
        noise.sigma(0, 0);
    inv_t /= det;  // inverse of sigma^T
    coupling = gen.d1.adjoint() * inv_t.cast<Complex>();
  } else if (dl_q.norm() + dl_p.norm() > 1e-12 * op_scale) {
    throw InvariantError(
        "em_step: sigma is singular while back-reaction is present; "
        "cannot form sigma^{-T}");
  }

  Vector noise_vec =
      ((coupling(0, 0) * dl_q + coupling(1, 0) * dl_p) * state.psi) * dw_q +
      ((coupling(0, 1) * dl_q + coupling(1, 1) * dl_p) * state.psi) * dw_p;

  // Quadratic drift: (1/2) sum_{ab} dL_a (D0^T_{ab} L_b - D0_{ab} <L_b>).
  const Matrix* dl[2] = {&dl_q, &dl_p};
  const Matrix* lop[2] = {&gen.l_q, &gen.l_p};
  const Complex ev[2] = {ev_q, ev_p};
  Matrix quad = Matrix::Zero(dim, dim);
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      quad.noalias() += gen.d0(b, a) * ((*dl[a]) * (*lop[b]));
      quad -= (gen.d0(a, b) * ev[b]) * (*dl[a]);
    }
  }

  const Matrix h_unitary = gen.h + gen.h_eff;
  Vector psi_next =
      state.psi +
      dt * ((-kI / pr.hbar) * (h_unitary * state.psi) -
            0.5 * (quad * state.psi)) +
      noise_vec;
  if (!psi_next.allFinite()) {
    throw InvariantError("em_step: non-finite quantum state after update");
  }
  const double next_nrm2 = psi_next.squaredNorm();
  if (!(next_nrm2 > 0.0)) {
    throw InvariantError("em_step: quantum state collapsed to zero norm");
  }
  out.norm_growth = state.norm_growth * (next_nrm2 / nrm2);
  if (opt.renormalize) psi_next /= std::sqrt(next_nrm2);
  out.psi = std::move(psi_next);
  return out;
}

// Supplies generator data along a trajectory.  Direct mode assembles the
// operators exactly at every query point; lattice mode precomputes them on a
// phase-space grid and interpolates bilinearly (the operator evaluation is
// the per-step cost hotspot), falling back to direct evaluation outside the
// lattice.  The noise blocks are point-independent and cached.
class GeneratorProvider {
 public:
  GeneratorProvider(HamiltonianPtr ham, const Params& pr,
                    HeffOptions heff = {})
      : ham_(std::move(ham)), pr_(pr), heff_(heff) {
    pr_.validate();
    dmats_ = d_matrices(pr_);
    TradeoffReport rep = tradeoff_check(dmats_.d0, dmats_.d1, dmats_.d2);
    if (!rep.satisfied) {
      throw InvariantError(
          "GeneratorProvider: noise matrices violate the trade-off");
    }
  }

  GeneratorProvider(HamiltonianPtr ham, const Params& pr,
                    const PhaseGrid& lattice, HeffOptions heff = {})
      : GeneratorProvider(std::move(ham), pr, heff) {
    lattice.validate();
    lattice_ = lattice;
    const long n = lattice.size();
    h_.resize(n);
    h_eff_.resize(n);
    l_q_.resize(n);
    l_p_.resize(n);
    for (int i = 0; i < lattice.n_q; ++i) {
      for (int j = 0; j < lattice.n_p; ++j) {
        GeneratorData g = evaluate(lattice.q(i), lattice.p(j));
        const long k = static_cast<long>(i) * lattice.n_p + j;
        h_[k] = std::move(g.h);
        h_eff_[k] = std::move(g.h_eff);
        l_q_[k] = std::move(g.l_q);
        l_p_[k] = std::move(g.l_p);
      }
    }
  }

  const Params& params() const { return pr_; }
  const Hamiltonian& hamiltonian() const { return *ham_; }
  const DMatrices& d_matrices_cached() const { return dmats_; }
  bool interpolating() const { return lattice_.has_value(); }

  GeneratorData at(double q, double p) const {
    if (lattice_) {
      const PhaseGrid& g = *lattice_;
      const double fi = (q - g.q_min) / g.dq();
      const double fj = (p - g.p_min) / g.dp();
      if (fi >= 0.0 && fi <= g.n_q - 1 && fj >= 0.0 && fj <= g.n_p - 1) {
        int i = std::min(static_cast<int>(fi), g.n_q - 2);
        int j = std::min(static_cast<int>(fj), g.n_p - 2);
        const double xq = fi - i;
        const double xp = fj - j;
        auto node = [&](int a, int b) {
          return static_cast<long>(a) * g.n_p + b;
        };
        auto lerp = [&](const std::vector<Matrix>& f) {
          return ((1.0 - xq) * (1.0 - xp)) * f[node(i, j)] +
                 (xq * (1.0 - xp)) * f[node(i + 1, j)] +
                 ((1.0 - xq) * xp) * f[node(i, j + 1)] +
                 (xq * xp) * f[node(i + 1, j + 1)];
        };
        GeneratorData out;
        out.h = lerp(h_);
        out.h_eff = lerp(h_eff_);
        out.l_q = lerp(l_q_);
        out.l_p = lerp(l_p_);
        out.d0 = dmats_.d0;
        out.d1 = dmats_.d1;
        out.d2 = dmats_.d2;
        return out;
      }
    }
    return evaluate(q, p);
  }

 private:
  GeneratorData evaluate(double q, double p) const {
    GeneratorData g;
    g.h = ham_->h(q, p);
    LindbladPair l = lindblad_ops(*ham_, pr_, q, p);
    g.l_q = std::move(l.l_q);
    g.l_p = std::move(l.l_p);
    g.h_eff = h_eff(*ham_, pr_, q, p, heff_);
    if (ham_->has_h1()) {
      Matrix h1 = ham_->h1(q, p);
      g.h_eff += pr_.hbar * hermitian_part(h1_correction(g.h, h1, pr_.E));
      g.h += pr_.hbar * h1;
    }
    g.d0 = dmats_.d0;
    g.d1 = dmats_.d1;
    g.d2 = dmats_.d2;
    return g;
  }

  HamiltonianPtr ham_;
  Params pr_;
  HeffOptions heff_;
  DMatrices dmats_;
  std::optional<PhaseGrid> lattice_;
  std::vector<Matrix> h_, h_eff_, l_q_, l_p_;
};

struct EnsembleOptions {
  long n_traj = 1;
  double t_final = 1.0;
  double dt = 1e-3;
  std::uint64_t seed = 0;
  int threads = 0;     // 0: hardware concurrency
  int checkpoints = 5; // evenly spaced in (0, t_final]; t = 0 is always row 0
  bool renormalize = true;
  // Gaussian spread of the initial classical point (zero keeps it sharp).
  // Matching these to the widths of a phase-space product state makes the
  // ensemble average directly comparable to a grid evolution started from
  // that state.
  double init_var_q = 0.0;
  double init_var_p = 0.0;
  std::vector<Matrix> observables;      // Hermitian quantum observables
  std::vector<std::size_t> record;      // trajectory indices to record
};

struct CheckpointStats {
  double t = 0.0;
  double mean_q = 0.0, se_q = 0.0;
  double mean_p = 0.0, se_p = 0.0;
  double var_q = 0.0, var_p = 0.0;
  double mean_purity = 0.0, se_purity = 0.0;
  double mean_purity_defect = 0.0, max_purity_defect = 0.0;
  std::vector<double> obs_mean, obs_se;
};

struct RecordedPoint {
  double t = 0.0, q = 0.0, p = 0.0;
  Vector psi;
};

struct EnsembleResult {
  std::vector<CheckpointStats> checkpoints;
  // recorded[k] holds the checkpoint snapshots of options.record[k].
  std::vector<std::vector<RecordedPoint>> recorded;
  long n_traj = 0;
  double dt = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

// step index 0 of every RNG stream is reserved for the initial-condition
// draws, so trajectory steps are numbered from 1.
constexpr std::uint64_t kInitDrawStep = 0;

}  // namespace detail

// Runs independent trajectories with per-trajectory counter-based RNG
// streams and merges the statistics in trajectory order, so results are
// bit-identical for a given seed regardless of thread count.
inline EnsembleResult run_ensemble(const GeneratorProvider& provider,
                                   const TrajectoryState& initial,
                                   const EnsembleOptions& opt) {
  if (opt.n_traj < 1) {
    throw ConfigError("/unravel/n_traj: expected integer >= 1");
  }
  if (!(opt.t_final > 0.0)) {
    throw ConfigError("/time/t_final: expected number > 0");
  }
  if (!(opt.dt > 0.0)) throw ConfigError("/time/dt: expected number > 0");
  if (opt.checkpoints < 1) {
    throw ConfigError("/unravel/checkpoints: expected integer >= 1");
  }
  if (opt.init_var_q < 0.0 || opt.init_var_p < 0.0) {
    throw ConfigError("/unravel/init_var: expected number >= 0");
  }
  const double span = opt.t_final / opt.checkpoints;
  const double ratio = span / opt.dt;
  const long steps_per_cp = std::lround(ratio);
  if (steps_per_cp < 1 ||
      std::abs(ratio - static_cast<double>(steps_per_cp)) > 1e-9) {
    throw ConfigError(
        "/time/dt: dt must divide t_final / checkpoints evenly");
  }
  if (initial.psi.size() == 0 || !(initial.psi.norm() > 0.0)) {
    throw ConfigError("/initial: expected a nonzero quantum state");
  }
  for (const Matrix& ob : opt.observables) {
    if (ob.rows() != initial.psi.size() || ob.cols() != initial.psi.size()) {
      throw ConfigError(
          "/unravel/observables: dimension does not match the quantum state");
    }
  }
  for (std::size_t idx : opt.record) {
    if (idx >= static_cast<std::size_t>(opt.n_traj)) {
      throw ConfigError("/unravel/record: trajectory index out of range");
    }
  }

  const int n_cp = opt.checkpoints + 1;  // + the t = 0 row
  const std::size_t n_obs = opt.observables.size();
  const std::size_t row = 3 + n_obs;  // q, p, purity, observables...
  std::vector<double> table(static_cast<std::size_t>(opt.n_traj) * n_cp * row);
  std::vector<std::vector<RecordedPoint>> recorded(opt.record.size());
  for (auto& r : recorded) r.reserve(n_cp);

  const RealMatrix sigma = sigma_from_d2(provider.d_matrices_cached().d2);
  Vector psi0 = initial.psi / initial.psi.norm();
  const double sd_q = std::sqrt(opt.init_var_q);
  const double sd_p = std::sqrt(opt.init_var_p);
  const double sqrt_dt = std::sqrt(opt.dt);
  EmStepOptions step_opt;
  step_opt.renormalize = opt.renormalize;

  auto run_trajectory = [&](long traj) {
    CounterRng rng(opt.seed, static_cast<std::uint64_t>(traj));
    NoiseModel noise{sigma, opt.seed, static_cast<std::uint64_t>(traj)};
    TrajectoryState state;
    state.q = initial.q + sd_q * rng.normal(detail::kInitDrawStep, 0);
    state.p = initial.p + sd_p * rng.normal(detail::kInitDrawStep, 1);
    state.t = initial.t;
    state.psi = psi0;

    std::vector<std::vector<RecordedPoint>*> slots;
    for (std::size_t k = 0; k < opt.record.size(); ++k) {
      if (opt.record[k] == static_cast<std::size_t>(traj)) {
        slots.push_back(&recorded[k]);
      }
    }

    std::uint64_t step_index = detail::kInitDrawStep;
    for (int cp = 0; cp < n_cp; ++cp) {
      if (cp > 0) {
        for (long k = 0; k < steps_per_cp; ++k) {
          ++step_index;
          const double dw_q = sqrt_dt * rng.normal(step_index, 0);
          const double dw_p = sqrt_dt * rng.normal(step_index, 1);
          GeneratorData gen = provider.at(state.q, state.p);
          state = em_step(state, opt.dt, gen, provider.params(), noise, dw_q,
                          dw_p, step_opt);
        }
      }
      double* out = table.data() +
                    (static_cast<std::size_t>(traj) * n_cp + cp) * row;
      out[0] = state.q;
      out[1] = state.p;
      out[2] = state.norm_growth * state.norm_growth;
      const double nrm2 = state.psi.squaredNorm();
      for (std::size_t ob = 0; ob < n_obs; ++ob) {
        out[3 + ob] =
            expectation(state.psi, opt.observables[ob]).real() / nrm2;
      }
      for (auto* slot : slots) {
        slot->push_back({state.t, state.q, state.p, state.psi});
      }
    }
  };

  int n_threads = opt.threads > 0
                      ? opt.threads
                      : static_cast<int>(std::thread::hardware_concurrency());
  if (n_threads < 1) n_threads = 1;
  n_threads = static_cast<int>(
      std::min<long>(n_threads, opt.n_traj));
  if (n_threads == 1) {
    for (long traj = 0; traj < opt.n_traj; ++traj) run_trajectory(traj);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(
        static_cast<std::size_t>(n_threads));
    const long per = (opt.n_traj + n_threads - 1) / n_threads;
    for (int w = 0; w < n_threads; ++w) {
      const long lo = w * per;
      const long hi = std::min<long>(opt.n_traj, lo + per);
      pool.emplace_back([&, w, lo, hi]() {
        try {
          for (long traj = lo; traj < hi; ++traj) run_trajectory(traj);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }

  EnsembleResult result;
  result.n_traj = opt.n_traj;
  result.dt = opt.dt;
  result.seed = opt.seed;
  result.recorded = std::move(recorded);
  result.checkpoints.resize(static_cast<std::size_t>(n_cp));
  const double n = static_cast<double>(opt.n_traj);
  for (int cp = 0; cp < n_cp; ++cp) {
    CheckpointStats& st = result.checkpoints[static_cast<std::size_t>(cp)];
    st.t = initial.t + cp * span;
    st.obs_mean.assign(n_obs, 0.0);
    st.obs_se.assign(n_obs, 0.0);
    std::vector<double> sum(row, 0.0), sum_sq(row, 0.0);
    double defect_sum = 0.0, defect_max = 0.0;
    for (long traj = 0; traj < opt.n_traj; ++traj) {
      const double* in = table.data() +
                         (static_cast<std::size_t>(traj) * n_cp + cp) * row;
      for (std::size_t c = 0; c < row; ++c) {
        sum[c] += in[c];
        sum_sq[c] += in[c] * in[c];
      }
      const double defect = std::abs(1.0 - in[2]);
      defect_sum += defect;
      defect_max = std::max(defect_max, defect);
    }
    auto finish = [&](std::size_t c, double& mean, double& se,
                      double* variance) {
      mean = sum[c] / n;
      const double var =
          std::max(0.0, sum_sq[c] / n - mean * mean) * (n / std::max(1.0, n - 1.0));
      se = opt.n_traj > 1 ? std::sqrt(var / n) : 0.0;
      if (variance != nullptr) *variance = var;
    };
    finish(0, st.mean_q, st.se_q, &st.var_q);
    finish(1, st.mean_p, st.se_p, &st.var_p);
    finish(2, st.mean_purity, st.se_purity, nullptr);
    for (std::size_t ob = 0; ob < n_obs; ++ob) {
      finish(3 + ob, st.obs_mean[ob], st.obs_se[ob], nullptr);
    }
    st.mean_purity_defect = defect_sum / n;
    st.max_purity_defect = defect_max;
  }
  return result;
}

}  // namespace cq
