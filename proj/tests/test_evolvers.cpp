#include <catch2/catch_amalgamated.hpp>

#include <memory>

#include "cq/evolvers.hpp"
#include "test_helpers.hpp"

using namespace cq;

namespace {

PhaseGrid grid_n(int n, double half = 8.0) {
  PhaseGrid g;
  g.n_q = n;
  g.n_p = n;
  g.q_min = -half;
  g.q_max = half;
  g.p_min = -half;
  g.p_max = half;
  return g;
}

Vector plus_state() {
  Vector v(2);
  v << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
  return v;
}

Vector trivial_state() {
  Vector v(1);
  v << 1.0;
  return v;
}

double max_pointwise_diff(const OperatorField& a, const OperatorField& b) {
  double err = 0.0;
  for (int i = 0; i < a.grid().n_q; ++i) {
    for (int j = 0; j < a.grid().n_p; ++j) {
      err = std::max(err, (a.at(i, j) - b.at(i, j)).norm());
    }
  }
  return err;
}

}  // namespace

TEST_CASE("generator kind names round-trip") {
  for (GeneratorKind k :
       {GeneratorKind::main_cq, GeneratorKind::liouville, GeneratorKind::qcle,
        GeneratorKind::husimi_h0, GeneratorKind::glauber_h0,
        GeneratorKind::self_commuting, GeneratorKind::fokker_planck}) {
    CHECK(generator_kind_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(generator_kind_from_string("banana"), ConfigError);
}

TEST_CASE("kind restrictions are enforced at cache build time") {
  Params pr;
  PhaseGrid g = grid_n(16);
  QubitTransverse qt(1.0, 0.5, 0.4);
  CHECK_THROWS_AS(
      build_evolver_cache(qt, pr, g, GeneratorKind::fokker_planck),
      ConfigError);
  CHECK_THROWS_AS(
      build_evolver_cache(qt, pr, g, GeneratorKind::self_commuting),
      ConfigError);
}

TEST_CASE("averaging the two ordered expansions recovers the transport form") {
  Params pr;
  pr.hbar = 0.7;
  pr.E = 0.9;
  pr.s = 1.1;
  PhaseGrid g = grid_n(32, 4.0);
  QubitTransverse ham(1.0, 0.5, 0.4);
  OperatorField rho = coherent_product_state(g, plus_state(), 0.3, -0.4, pr);

  auto pre = build_evolver_cache(ham, pr, g, GeneratorKind::husimi_h0);
  auto post = build_evolver_cache(ham, pr, g, GeneratorKind::glauber_h0);
  auto mid = build_evolver_cache(ham, pr, g, GeneratorKind::qcle);

  OperatorField a = apply_generator(pre, rho);
  OperatorField b = apply_generator(post, rho);
  OperatorField c = apply_generator(mid, rho);
  a.add_scaled(1.0, b);
  a.scale(0.5);
  double scale = std::max(1.0, c.max_entry_abs());
  CHECK(max_pointwise_diff(a, c) < 1e-12 * scale);
}

TEST_CASE("hybrid evolution conserves trace and Hermiticity") {
  Params pr;
  pr.hbar = 1.0;
  pr.E = 1.0;
  pr.s = 1.0;
  PhaseGrid g = grid_n(32, 4.0);
  QubitTransverse ham(1.0, 0.5, 0.4);
  OperatorField rho0 = coherent_product_state(g, plus_state(), 0.0, 0.0, pr);
  auto cache = build_evolver_cache(ham, pr, g, GeneratorKind::main_cq);

  EvolveOptions eo;
  eo.t_final = 0.05;
  EvolveResult res = evolve(cache, rho0, eo);
  FieldDiagnostics before = diagnostics(rho0);
  FieldDiagnostics after = diagnostics(res.state);
  CHECK(std::abs(after.total_trace - before.total_trace) < 1e-10);
  CHECK(after.hermiticity_defect < 1e-12);
  CHECK(res.steps * res.dt == Catch::Approx(eo.t_final).epsilon(1e-14));
}

TEST_CASE("lone particle: the hybrid generator is the classical one") {
  Params pr;
  pr.hbar = 1.0;
  pr.E = 0.8;
  pr.s = 1.1;
  PhaseGrid g = grid_n(32, 4.0);
  SingleSystem ham(1.0, Potential{1.0, 0.0});
  OperatorField rho0 = coherent_product_state(g, trivial_state(), 0.5, 0.0, pr);

  auto full = build_evolver_cache(ham, pr, g, GeneratorKind::main_cq);
  auto fp = build_evolver_cache(ham, pr, g, GeneratorKind::fokker_planck);
  EvolveOptions eo;
  eo.t_final = 0.2;
  eo.dt = 0.002;
  OperatorField a = evolve(full, rho0, eo).state;
  OperatorField b = evolve(fp, rho0, eo).state;
  CHECK(max_pointwise_diff(a, b) < 1e-10);
}

TEST_CASE("linear qubit: hybrid equals the self-commuting closed form") {
  Params pr;
  pr.hbar = 1.0;
  pr.E = 1.0;
  pr.s = 1.0;
  PhaseGrid g = grid_n(32, 4.0);
  QubitLinear ham(1.0, 0.5);
  OperatorField rho0 = coherent_product_state(g, plus_state(), 0.0, 0.5, pr);

  auto full = build_evolver_cache(ham, pr, g, GeneratorKind::main_cq);
  auto sc = build_evolver_cache(ham, pr, g, GeneratorKind::self_commuting);
  EvolveOptions eo;
  eo.t_final = 0.1;
  EvolveResult ra = evolve(full, rho0, eo);
  EvolveResult rb = evolve(sc, rho0, eo);
  CHECK(ra.dt == rb.dt);  // identical stability bounds
  CHECK(max_pointwise_diff(ra.state, rb.state) < 1e-9);
}

TEST_CASE("pointwise von Neumann flow leaves the classical weight frozen") {
  Params pr;
  pr.hbar = 0.05;  // stiff enough to force the split path
  PhaseGrid g = grid_n(128, 4.0);
  QubitTransverse ham(1.0, 0.4, 0.7);
  OperatorField rho0 = coherent_product_state(g, plus_state(), 0.0, 0.0, pr);
  auto cache = build_evolver_cache(ham, pr, g, GeneratorKind::liouville);
  EvolveOptions eo;
  eo.t_final = 0.3;
  EvolveResult res = evolve(cache, rho0, eo);
  CHECK(res.used_split);

  double weight_err = 0.0;
  for (int i = 0; i < g.n_q; ++i) {
    for (int j = 0; j < g.n_p; ++j) {
      weight_err = std::max(
          weight_err, std::abs((res.state.at(i, j) - rho0.at(i, j))
                                   .trace()
                                   .real()));
    }
  }
  CHECK(weight_err < 1e-12);
  // The quantum state itself must have rotated.
  FieldDiagnostics d0 = diagnostics(rho0);
  FieldDiagnostics d1 = diagnostics(res.state);
  CHECK((d0.partial_state - d1.partial_state).norm() > 1e-3);
}

TEST_CASE("split and unsplit integration agree on smooth problems") {
  Params pr;
  pr.hbar = 1.0;
  pr.E = 1.0;
  PhaseGrid g = grid_n(32, 4.0);
  QubitTransverse ham(1.0, 0.3, 0.5);
  OperatorField rho0 = coherent_product_state(g, plus_state(), 0.0, 0.0, pr);
  auto cache = build_evolver_cache(ham, pr, g, GeneratorKind::main_cq);

  EvolveOptions with_split;
  with_split.t_final = 0.1;
  with_split.dt = 0.005;
  with_split.split_threshold = 0.0;  // force conjugation on
  EvolveOptions without;
  without.t_final = 0.1;
  without.dt = 0.005;
  without.allow_split = false;

  OperatorField a = evolve(cache, rho0, with_split).state;
  OperatorField b = evolve(cache, rho0, without).state;
  CHECK(max_pointwise_diff(a, b) < 1e-6);
}

TEST_CASE("instability detection aborts divergent runs") {
  Params pr;
  PhaseGrid g = grid_n(32, 4.0);
  SingleSystem ham(1.0, Potential{1.0, 0.0});
  OperatorField rho0 = coherent_product_state(g, trivial_state(), 0.0, 0.0, pr);
  auto cache = build_evolver_cache(ham, pr, g, GeneratorKind::fokker_planck);
  EvolveOptions eo;
  eo.t_final = 1.0;
  eo.dt = 0.5;  // far beyond the diffusive stability limit
  CHECK_THROWS_AS(evolve(cache, rho0, eo), InvariantError);
}

TEST_CASE("free-particle momentum variance grows at the diffusion rate") {
  Params pr;
  pr.hbar = 1.0;
  pr.E = 1.0;
  pr.s = 1.2;
  PhaseGrid g = grid_n(64);
  SingleSystem ham(1.0, Potential{0.0, 0.0});
  OperatorField rho0 = coherent_product_state(g, trivial_state(), 0.0, 0.0, pr);
  auto cache = build_evolver_cache(ham, pr, g, GeneratorKind::fokker_planck);
  EvolveOptions eo;
  eo.t_final = 0.5;
  FieldDiagnostics d0 = diagnostics(rho0);
  FieldDiagnostics d1 = diagnostics(evolve(cache, rho0, eo).state);
  double expected = d0.var_p + pr.E / (pr.s * pr.s) * eo.t_final;
  CHECK(d1.var_p == Catch::Approx(expected).epsilon(5e-3));
}

TEST_CASE("product-formula steps converge to the classical flow") {
  Params pr;
  pr.hbar = 1.0;
  pr.E = 1.0;
  pr.s = 1.0;
  PhaseGrid g = grid_n(32, 4.0);
  SingleSystem ham(1.0, Potential{1.0, 0.0});
  OperatorField rho0 = coherent_product_state(g, trivial_state(), 1.0, 0.0, pr);

  const double t = 0.25;
  std::vector<double> taus = {t / 4, t / 8, t / 16};
  ConvergenceStudy sym =
      convergence_study(ham, pr, g, rho0, t, taus, TrotterOrdering::sym);
  REQUIRE(sym.points.size() == 3);
  CHECK(sym.reference_tau == Catch::Approx(t / 128));
  CHECK(sym.points[0].l1_error > sym.points[2].l1_error);
  CHECK(sym.slope > 1.5);  // symmetric splitting is second order

  ConvergenceStudy pre =
      convergence_study(ham, pr, g, rho0, t, taus, TrotterOrdering::pre);
  CHECK(pre.slope > 0.8);

  ConvergenceStudy post =
      convergence_study(ham, pr, g, rho0, t, taus, TrotterOrdering::post);
  CHECK(post.slope > 0.8);
}

TEST_CASE("fine product-formula steps track the advection-diffusion solve") {
  Params pr;
  pr.hbar = 1.0;
  pr.E = 1.0;
  pr.s = 1.0;
  PhaseGrid g = grid_n(64, 4.0);
  SingleSystem ham(1.0, Potential{1.0, 0.0});
  OperatorField rho0 = coherent_product_state(g, trivial_state(), 1.0, 0.0, pr);

  const double t = 0.25;
  const double tau = t / 64;
  TrotterOperator op = make_trotter(ham, pr, g, TrotterOrdering::sym, tau);
  OperatorField split = rho0;
  for (int k = 0; k < 64; ++k) split = apply_trotter(op, split);

  auto cache = build_evolver_cache(ham, pr, g, GeneratorKind::fokker_planck);
  EvolveOptions eo;
  eo.t_final = t;
  OperatorField direct = evolve(cache, rho0, eo).state;
  // Smoothing is applied spectrally while the direct solve diffuses through
  // finite differences, so agreement is limited by the spatial resolution.
  CHECK(l1_distance(split, direct) < 5e-3);
}

TEST_CASE("tau must divide the horizon") {
  Params pr;
  PhaseGrid g = grid_n(32, 4.0);
  SingleSystem ham(1.0, Potential{1.0, 0.0});
  OperatorField rho0 = coherent_product_state(g, trivial_state(), 0.0, 0.0, pr);
  CHECK_THROWS_AS(
      convergence_study(ham, pr, g, rho0, 1.0, {0.3}, TrotterOrdering::sym),
      ConfigError);
}
