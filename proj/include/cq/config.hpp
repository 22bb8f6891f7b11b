#pragma once

// JSON run configuration and mode dispatch for the command-line driver.
//
// A run is described by a single JSON file; the command line only selects
// the mode and may override the output directory, seed, and thread cap.
// Parsing is strict: unknown keys are rejected, every diagnostic names the
// offending location as a JSON-pointer-style path, and all defaults are
// materialized into a "resolved" echo.  Every run writes that echo into
// `manifest.json` together with a SHA-256 digest of each emitted file, so
// two runs can be compared for bitwise reproducibility by comparing their
// manifests alone.
//
// Exit-code contract: 0 = success, 1 = configuration or I/O failure,
// 2 = a verification mode found a violated invariant.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cq/common.hpp"
#include "cq/digest.hpp"
#include "cq/evolvers.hpp"
#include "cq/generator.hpp"
#include "cq/hamiltonian.hpp"
#include "cq/phase_space.hpp"
#include "cq/unravelling.hpp"

namespace cq {

inline constexpr const char* kCodeVersion = "1.0.0";

enum class RunMode {
  evolve,
  unravel,
  check_positivity,
  trotter_convergence,
  cnm_table,
  ho_oracle,
};

inline std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::evolve: return "evolve";
    case RunMode::unravel: return "unravel";
    case RunMode::check_positivity: return "check-positivity";
    case RunMode::trotter_convergence: return "trotter-convergence";
    case RunMode::cnm_table: return "cnm-table";
    case RunMode::ho_oracle: return "ho-oracle";
  }
  throw InvariantError("unknown run mode");
}

inline const std::vector<std::string>& run_mode_names() {
  static const std::vector<std::string> names = {
      "evolve",    "unravel",   "check-positivity",
      "trotter-convergence", "cnm-table", "ho-oracle"};
  return names;
}

inline RunMode run_mode_from_string(const std::string& s) {
  for (RunMode m :
       {RunMode::evolve, RunMode::unravel, RunMode::check_positivity,
        RunMode::trotter_convergence, RunMode::cnm_table, RunMode::ho_oracle}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("/mode: unknown mode '" + s +
                    "' (expected evolve, unravel, check-positivity, "
                    "trotter-convergence, cnm-table, or ho-oracle)");
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::string& where,
                                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

inline double number_or(const nlohmann::json& j, const std::string& where,
                        const char* key, double dflt) {
  if (!j.contains(key)) return dflt;
  const nlohmann::json& v = j.at(key);
  if (!v.is_number()) {
    throw ConfigError(where + "/" + key + ": expected a number");
  }
  return v.get<double>();
}

inline double require_number(const nlohmann::json& j, const std::string& where,
                             const char* key) {
  if (!j.contains(key)) throw ConfigError(where + "/" + key + ": required");
  return number_or(j, where, key, 0.0);
}

inline long long integer_or(const nlohmann::json& j, const std::string& where,
                            const char* key, long long dflt) {
  if (!j.contains(key)) return dflt;
  const nlohmann::json& v = j.at(key);
  if (!v.is_number_integer()) {
    throw ConfigError(where + "/" + key + ": expected an integer");
  }
  return v.get<long long>();
}

inline long long require_integer(const nlohmann::json& j,
                                 const std::string& where, const char* key) {
  if (!j.contains(key)) throw ConfigError(where + "/" + key + ": required");
  return integer_or(j, where, key, 0);
}

inline bool bool_or(const nlohmann::json& j, const std::string& where,
                    const char* key, bool dflt) {
  if (!j.contains(key)) return dflt;
  const nlohmann::json& v = j.at(key);
  if (!v.is_boolean()) {
    throw ConfigError(where + "/" + key + ": expected a boolean");
  }
  return v.get<bool>();
}

inline std::string string_or(const nlohmann::json& j, const std::string& where,
                             const char* key, const std::string& dflt) {
  if (!j.contains(key)) return dflt;
  const nlohmann::json& v = j.at(key);
  if (!v.is_string()) {
    throw ConfigError(where + "/" + key + ": expected a string");
  }
  return v.get<std::string>();
}

inline std::string require_string(const nlohmann::json& j,
                                  const std::string& where, const char* key) {
  if (!j.contains(key)) throw ConfigError(where + "/" + key + ": required");
  return string_or(j, where, key, "");
}

inline std::vector<double> number_list_or(const nlohmann::json& j,
                                          const std::string& where,
                                          const char* key,
                                          std::vector<double> dflt) {
  if (!j.contains(key)) return dflt;
  const nlohmann::json& v = j.at(key);
  if (!v.is_array() || v.empty()) {
    throw ConfigError(where + "/" + key +
                      ": expected a nonempty array of numbers");
  }
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& e : v) {
    if (!e.is_number()) {
      throw ConfigError(where + "/" + key +
                        ": expected a nonempty array of numbers");
    }
    out.push_back(e.get<double>());
  }
  return out;
}

// A state vector is an array of components, each either a real number or a
// two-element [re, im] pair.  The result is normalized.
inline Vector parse_state_vector(const nlohmann::json& v,
                                 const std::string& where, int dim) {
  if (!v.is_array() || v.empty()) {
    throw ConfigError(where + ": expected a nonempty array of components");
  }
  Vector psi(static_cast<long>(v.size()));
  long idx = 0;
  for (const auto& e : v) {
    if (e.is_number()) {
      psi(idx++) = Complex{e.get<double>(), 0.0};
    } else if (e.is_array() && e.size() == 2 && e[0].is_number() &&
               e[1].is_number()) {
      psi(idx++) = Complex{e[0].get<double>(), e[1].get<double>()};
    } else {
      throw ConfigError(where +
                        ": each component must be a number or an [re, im] "
                        "pair");
    }
  }
  if (psi.size() != dim) {
    throw ConfigError(where + ": expected " + std::to_string(dim) +
                      " components for this model, got " +
                      std::to_string(psi.size()));
  }
  const double n = psi.norm();
  if (!(n > 0) || !std::isfinite(n)) {
    throw ConfigError(where + ": expected a nonzero state vector");
  }
  return psi / n;
}

inline std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (long r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (long c = 0; c < m.cols(); ++c) {
      row.push_back({m(r, c).real(), m(r, c).imag()});
    }
    rows.push_back(row);
  }
  return rows;
}

inline nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json out = nlohmann::json::array();
  for (long i = 0; i < v.size(); ++i) {
    out.push_back({v(i).real(), v(i).imag()});
  }
  return out;
}

}  // namespace detail

// Named quantum observables available to the unravelling summary.
inline Matrix observable_matrix(const std::string& name, int dim,
                                const std::string& where) {
  if (name == "sigma_x" || name == "sigma_y" || name == "sigma_z") {
    if (dim != 2) {
      throw ConfigError(where + ": '" + name +
                        "' requires a two-level model");
    }
    Matrix m(2, 2);
    if (name == "sigma_x") {
      m << 0, 1, 1, 0;
    } else if (name == "sigma_y") {
      m << 0, Complex{0, -1}, Complex{0, 1}, 0;
    } else {
      m << 1, 0, 0, -1;
    }
    return m;
  }
  if (name == "number") {
    Matrix m = Matrix::Zero(dim, dim);
    for (int i = 0; i < dim; ++i) m(i, i) = static_cast<double>(i);
    return m;
  }
  throw ConfigError(where + ": unknown observable '" + name +
                    "' (expected sigma_x, sigma_y, sigma_z, or number)");
}

struct OracleSpec {
  std::vector<double> e_values{4.0, 6.0, 8.0};
  std::vector<double> lambda_values{0.5, 1.0, 2.0};
  std::vector<double> m_q_values{0.5, 1.0, 2.0};
  double m_c = 1.0;
  int fock_dim = 20;
  // Extra ambient levels shielding the compared block from truncation
  // artifacts.  The effective-Hamiltonian series needs roughly one shell per
  // ambient level before its factorial tail wins, and shells beyond ~60
  // exceed the exact integer range of the coefficient table, so the ambient
  // dimension (fock_dim + padding) must stay near 32 or below.  Padding 12
  // keeps the compared block clean to ~1e-9 while respecting that ceiling.
  int padding = 12;
  double q = 0.7;
  double p = -0.4;
  double tol_lindblad = 1e-8;
  double tol_h_eff = 1e-6;
  double max_theta = 0.5;  // combos with a larger dressing argument are skipped
};

struct RunConfig {
  RunMode mode = RunMode::evolve;
  Params params;
  HamiltonianPtr model;  // null for modes that need no model
  GeneratorKind generator = GeneratorKind::main_cq;

  PhaseGrid grid;
  bool has_grid = false;

  double q0 = 0.0, p0 = 0.0;
  Vector psi;  // normalized initial quantum state

  double t_final = 1.0;
  double dt = 0.0;  // 0 selects the stability-derived step (grid modes)
  int checkpoints = 5;

  // unravel
  long n_traj = 1000;
  bool renormalize = true;
  bool match_state_width = true;
  double init_var_q = 0.0, init_var_p = 0.0;
  bool lattice = false;
  std::vector<std::string> observable_names;
  std::vector<std::size_t> record;

  // trotter-convergence
  std::vector<double> taus;
  TrotterOrdering ordering = TrotterOrdering::sym;

  // cnm-table
  int cnm_n_max = 6;

  // ho-oracle
  OracleSpec oracle;

  // check-positivity: "model" (canonical blocks from params) or "qcle"
  // (the classical-limit control blocks, which must fail)
  std::string positivity_matrices = "model";

  std::string out_dir = "out";
  bool write_final_snapshot = false;
  bool write_final_marginal = false;
  std::uint64_t seed = 0;
  int threads = 0;

  nlohmann::json resolved;  // defaults-filled echo, written to the manifest
};

struct CliOverrides {
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

namespace detail {

inline HamiltonianPtr parse_model(const nlohmann::json& m, const Params& pr,
                                  nlohmann::json* echo) {
  const std::string kind = require_string(m, "/model", "kind");
  if (kind == "single_system") {
    reject_unknown_keys(m, "/model", {"kind", "mass", "stiffness", "quartic"});
    const double mass = number_or(m, "/model", "mass", 1.0);
    Potential pot;
    pot.stiffness = number_or(m, "/model", "stiffness", 0.0);
    pot.quartic = number_or(m, "/model", "quartic", 0.0);
    *echo = {{"kind", kind},
             {"mass", mass},
             {"stiffness", pot.stiffness},
             {"quartic", pot.quartic}};
    return std::make_shared<SingleSystem>(mass, pot);
  }
  if (kind == "qubit_linear") {
    reject_unknown_keys(m, "/model", {"kind", "mass", "coupling", "h1_gap"});
    const double mass = number_or(m, "/model", "mass", 1.0);
    const double coupling = number_or(m, "/model", "coupling", 1.0);
    const double h1_gap = number_or(m, "/model", "h1_gap", 0.0);
    *echo = {{"kind", kind},
             {"mass", mass},
             {"coupling", coupling},
             {"h1_gap", h1_gap}};
    return std::make_shared<QubitLinear>(mass, coupling, h1_gap);
  }
  if (kind == "qubit_transverse") {
    reject_unknown_keys(m, "/model", {"kind", "mass", "coupling", "gap"});
    const double mass = number_or(m, "/model", "mass", 1.0);
    const double coupling = number_or(m, "/model", "coupling", 1.0);
    const double gap = number_or(m, "/model", "gap", 1.0);
    *echo = {{"kind", kind},
             {"mass", mass},
             {"coupling", coupling},
             {"gap", gap}};
    return std::make_shared<QubitTransverse>(mass, coupling, gap);
  }
  if (kind == "coupled_oscillators") {
    reject_unknown_keys(m, "/model",
                        {"kind", "m_c", "m_q", "lambda", "fock_dim"});
    const double m_c = number_or(m, "/model", "m_c", 1.0);
    const double m_q = number_or(m, "/model", "m_q", 1.0);
    const double lambda = number_or(m, "/model", "lambda", 1.0);
    const int fock_dim =
        static_cast<int>(integer_or(m, "/model", "fock_dim", 8));
    *echo = {{"kind", kind},
             {"m_c", m_c},
             {"m_q", m_q},
             {"lambda", lambda},
             {"fock_dim", fock_dim}};
    return std::make_shared<CoupledOscillators>(m_c, m_q, lambda, fock_dim,
                                                pr.hbar);
  }
  throw ConfigError("/model/kind: unknown model '" + kind +
                    "' (expected single_system, qubit_linear, "
                    "qubit_transverse, or coupled_oscillators)");
}

}  // namespace detail

inline RunConfig parse_config_json(const nlohmann::json& j, RunMode mode,
                                   const CliOverrides& ov = {}) {
  using nlohmann::json;
  if (!j.is_object()) throw ConfigError("/: expected a JSON object");
  detail::reject_unknown_keys(
      j, "/",
      {"mode", "model", "params", "generator", "grid", "initial", "time",
       "unravel", "trotter", "cnm", "oracle", "positivity", "output", "seed",
       "threads"});

  RunConfig c;
  c.mode = mode;
  json& r = c.resolved;
  r["mode"] = to_string(mode);

  if (j.contains("mode")) {
    const json& v = j.at("mode");
    if (!v.is_string()) throw ConfigError("/mode: expected a string");
    if (v.get<std::string>() != to_string(mode)) {
      throw ConfigError("/mode: config file says '" + v.get<std::string>() +
                        "' but the command line selected '" + to_string(mode) +
                        "'");
    }
  }

  const bool needs_model = mode == RunMode::evolve ||
                           mode == RunMode::unravel ||
                           mode == RunMode::trotter_convergence;
  const bool needs_initial = needs_model;

  {
    json p = j.value("params", json::object());
    detail::reject_unknown_keys(p, "/params", {"hbar", "E", "s"});
    c.params.hbar = detail::number_or(p, "/params", "hbar", 1.0);
    c.params.E = detail::number_or(p, "/params", "E", 1.0);
    c.params.s = detail::number_or(p, "/params", "s", 1.0);
    c.params.validate();
    r["params"] = {{"hbar", c.params.hbar}, {"E", c.params.E},
                   {"s", c.params.s}};
  }

  if (j.contains("model")) {
    json echo;
    c.model = detail::parse_model(j.at("model"), c.params, &echo);
    r["model"] = echo;
  } else if (needs_model) {
    throw ConfigError("/model: required for mode '" + to_string(mode) + "'");
  }

  c.generator = generator_kind_from_string(
      detail::string_or(j, "", "generator", "main_cq"));
  if (mode == RunMode::evolve) r["generator"] = to_string(c.generator);

  if (j.contains("grid")) {
    const json& g = j.at("grid");
    detail::reject_unknown_keys(
        g, "/grid", {"n_q", "n_p", "q_min", "q_max", "p_min", "p_max",
                     "boundary"});
    c.grid.n_q = static_cast<int>(detail::require_integer(g, "/grid", "n_q"));
    c.grid.n_p = static_cast<int>(detail::require_integer(g, "/grid", "n_p"));
    c.grid.q_min = detail::require_number(g, "/grid", "q_min");
    c.grid.q_max = detail::require_number(g, "/grid", "q_max");
    c.grid.p_min = detail::require_number(g, "/grid", "p_min");
    c.grid.p_max = detail::require_number(g, "/grid", "p_max");
    const std::string b =
        detail::string_or(g, "/grid", "boundary", "periodic");
    if (b == "periodic") {
      c.grid.boundary = Boundary::periodic;
    } else if (b == "clamped") {
      c.grid.boundary = Boundary::clamped;
    } else {
      throw ConfigError("/grid/boundary: expected 'periodic' or 'clamped'");
    }
    c.grid.validate();
    c.has_grid = true;
    r["grid"] = {{"n_q", c.grid.n_q},     {"n_p", c.grid.n_p},
                 {"q_min", c.grid.q_min}, {"q_max", c.grid.q_max},
                 {"p_min", c.grid.p_min}, {"p_max", c.grid.p_max},
                 {"boundary", b}};
  }
  const bool needs_grid =
      mode == RunMode::evolve || mode == RunMode::trotter_convergence;
  if (needs_grid && !c.has_grid) {
    throw ConfigError("/grid: required for mode '" + to_string(mode) + "'");
  }

  if (j.contains("initial") || needs_initial) {
    json ini = j.value("initial", json::object());
    detail::reject_unknown_keys(ini, "/initial", {"q0", "p0", "psi"});
    c.q0 = detail::number_or(ini, "/initial", "q0", 0.0);
    c.p0 = detail::number_or(ini, "/initial", "p0", 0.0);
    if (ini.contains("psi")) {
      if (!c.model) {
        throw ConfigError("/initial/psi: requires a model section");
      }
      c.psi = detail::parse_state_vector(ini.at("psi"), "/initial/psi",
                                         c.model->dim());
    } else if (c.model) {
      c.psi = Vector::Zero(c.model->dim());
      c.psi(0) = 1.0;
    }
    if (needs_initial) {
      r["initial"] = {{"q0", c.q0},
                      {"p0", c.p0},
                      {"psi", detail::vector_to_json(c.psi)}};
    }
  }

  const bool needs_time = mode == RunMode::evolve ||
                          mode == RunMode::unravel ||
                          mode == RunMode::trotter_convergence;
  {
    json t = j.value("time", json::object());
    detail::reject_unknown_keys(t, "/time", {"t_final", "dt", "checkpoints"});
    c.t_final = detail::number_or(t, "/time", "t_final", 1.0);
    if (!(c.t_final > 0)) {
      throw ConfigError("/time/t_final: expected number > 0");
    }
    c.dt = detail::number_or(t, "/time", "dt", 0.0);
    if (c.dt < 0) throw ConfigError("/time/dt: expected number >= 0");
    if (mode == RunMode::unravel && !(c.dt > 0)) {
      throw ConfigError("/time/dt: expected number > 0 for unravel runs");
    }
    c.checkpoints =
        static_cast<int>(detail::integer_or(t, "/time", "checkpoints", 5));
    if (c.checkpoints < 1) {
      throw ConfigError("/time/checkpoints: expected integer >= 1");
    }
    if (needs_time) {
      r["time"] = {{"t_final", c.t_final},
                   {"dt", c.dt},
                   {"checkpoints", c.checkpoints}};
    }
  }

  if (j.contains("unravel") || mode == RunMode::unravel) {
    json u = j.value("unravel", json::object());
    detail::reject_unknown_keys(
        u, "/unravel",
        {"n_traj", "renormalize", "match_state_width", "init_var_q",
         "init_var_p", "lattice", "observables", "record"});
    c.n_traj = detail::integer_or(u, "/unravel", "n_traj", 1000);
    if (c.n_traj < 1) {
      throw ConfigError("/unravel/n_traj: expected integer >= 1");
    }
    c.renormalize = detail::bool_or(u, "/unravel", "renormalize", true);
    c.match_state_width =
        detail::bool_or(u, "/unravel", "match_state_width", true);
    if (c.match_state_width) {
      if (u.contains("init_var_q") || u.contains("init_var_p")) {
        throw ConfigError(
            "/unravel/match_state_width: disable it to set explicit "
            "init_var_q / init_var_p");
      }
      // Same widths as the coherent phase-space product state, so the
      // ensemble is directly comparable to a grid evolution from that state.
      c.init_var_q = c.params.hbar * c.params.s * c.params.s / 2.0;
      c.init_var_p = c.params.hbar / (2.0 * c.params.s * c.params.s);
    } else {
      c.init_var_q = detail::number_or(u, "/unravel", "init_var_q", 0.0);
      c.init_var_p = detail::number_or(u, "/unravel", "init_var_p", 0.0);
      if (c.init_var_q < 0) {
        throw ConfigError("/unravel/init_var_q: expected number >= 0");
      }
      if (c.init_var_p < 0) {
        throw ConfigError("/unravel/init_var_p: expected number >= 0");
      }
    }
    c.lattice = detail::bool_or(u, "/unravel", "lattice", false);
    if (mode == RunMode::unravel && c.lattice && !c.has_grid) {
      throw ConfigError("/grid: required when unravel.lattice is true");
    }
    if (u.contains("observables")) {
      const json& obs = u.at("observables");
      if (!obs.is_array()) {
        throw ConfigError("/unravel/observables: expected an array of names");
      }
      for (const auto& e : obs) {
        if (!e.is_string()) {
          throw ConfigError(
              "/unravel/observables: expected an array of names");
        }
        const std::string name = e.get<std::string>();
        if (std::find(c.observable_names.begin(), c.observable_names.end(),
                      name) != c.observable_names.end()) {
          throw ConfigError("/unravel/observables: duplicate name '" + name +
                            "'");
        }
        if (c.model) {
          observable_matrix(name, c.model->dim(), "/unravel/observables");
        }
        c.observable_names.push_back(name);
      }
    }
    if (u.contains("record")) {
      const json& rec = u.at("record");
      if (!rec.is_array()) {
        throw ConfigError("/unravel/record: expected an array of indices");
      }
      for (const auto& e : rec) {
        if (!e.is_number_integer() || e.get<long long>() < 0) {
          throw ConfigError("/unravel/record: expected integers >= 0");
        }
        const long long idx = e.get<long long>();
        if (idx >= c.n_traj) {
          throw ConfigError("/unravel/record: trajectory index out of range");
        }
        c.record.push_back(static_cast<std::size_t>(idx));
      }
    }
    if (mode == RunMode::unravel) {
      r["unravel"] = {{"n_traj", c.n_traj},
                      {"renormalize", c.renormalize},
                      {"match_state_width", c.match_state_width},
                      {"init_var_q", c.init_var_q},
                      {"init_var_p", c.init_var_p},
                      {"lattice", c.lattice},
                      {"observables", c.observable_names},
                      {"record", c.record}};
    }
  }

  {
    json tr = j.value("trotter", json::object());
    detail::reject_unknown_keys(tr, "/trotter", {"taus", "ordering"});
    if (tr.contains("taus")) {
      c.taus = detail::number_list_or(tr, "/trotter", "taus", {});
      for (double tau : c.taus) {
        if (!(tau > 0)) {
          throw ConfigError("/trotter/taus: expected positive entries");
        }
      }
    } else if (mode == RunMode::trotter_convergence) {
      throw ConfigError("/trotter/taus: required for trotter-convergence");
    }
    c.ordering = trotter_ordering_from_string(
        detail::string_or(tr, "/trotter", "ordering", "sym"));
    if (mode == RunMode::trotter_convergence) {
      r["trotter"] = {{"taus", c.taus}, {"ordering", to_string(c.ordering)}};
    }
  }

  {
    json cn = j.value("cnm", json::object());
    detail::reject_unknown_keys(cn, "/cnm", {"n_max"});
    c.cnm_n_max = static_cast<int>(detail::integer_or(cn, "/cnm", "n_max", 6));
    if (c.cnm_n_max < 0) {
      throw ConfigError("/cnm/n_max: expected integer >= 0");
    }
    if (mode == RunMode::cnm_table) r["cnm"] = {{"n_max", c.cnm_n_max}};
  }

  {
    json o = j.value("oracle", json::object());
    detail::reject_unknown_keys(
        o, "/oracle",
        {"e_values", "lambda_values", "m_q_values", "m_c", "fock_dim",
         "padding", "q", "p", "tol_lindblad", "tol_h_eff", "max_theta"});
    OracleSpec& sp = c.oracle;
    sp.e_values = detail::number_list_or(o, "/oracle", "e_values",
                                         sp.e_values);
    sp.lambda_values =
        detail::number_list_or(o, "/oracle", "lambda_values",
                               sp.lambda_values);
    sp.m_q_values =
        detail::number_list_or(o, "/oracle", "m_q_values", sp.m_q_values);
    for (const auto* lst : {&sp.e_values, &sp.lambda_values, &sp.m_q_values}) {
      for (double v : *lst) {
        if (!(v > 0)) {
          throw ConfigError("/oracle: parameter lists must be positive");
        }
      }
    }
    sp.m_c = detail::number_or(o, "/oracle", "m_c", sp.m_c);
    if (!(sp.m_c > 0)) throw ConfigError("/oracle/m_c: expected number > 0");
    sp.fock_dim =
        static_cast<int>(detail::integer_or(o, "/oracle", "fock_dim",
                                            sp.fock_dim));
    if (sp.fock_dim < 2) {
      throw ConfigError("/oracle/fock_dim: expected integer >= 2");
    }
    sp.padding = static_cast<int>(detail::integer_or(o, "/oracle", "padding",
                                                     sp.padding));
    if (sp.padding < 0) {
      throw ConfigError("/oracle/padding: expected integer >= 0");
    }
    sp.q = detail::number_or(o, "/oracle", "q", sp.q);
    sp.p = detail::number_or(o, "/oracle", "p", sp.p);
    sp.tol_lindblad =
        detail::number_or(o, "/oracle", "tol_lindblad", sp.tol_lindblad);
    sp.tol_h_eff = detail::number_or(o, "/oracle", "tol_h_eff", sp.tol_h_eff);
    sp.max_theta = detail::number_or(o, "/oracle", "max_theta", sp.max_theta);
    if (!(sp.tol_lindblad > 0) || !(sp.tol_h_eff > 0) ||
        !(sp.max_theta > 0)) {
      throw ConfigError("/oracle: tolerances and max_theta must be > 0");
    }
    if (mode == RunMode::ho_oracle) {
      r["oracle"] = {{"e_values", sp.e_values},
                     {"lambda_values", sp.lambda_values},
                     {"m_q_values", sp.m_q_values},
                     {"m_c", sp.m_c},
                     {"fock_dim", sp.fock_dim},
                     {"padding", sp.padding},
                     {"q", sp.q},
                     {"p", sp.p},
                     {"tol_lindblad", sp.tol_lindblad},
                     {"tol_h_eff", sp.tol_h_eff},
                     {"max_theta", sp.max_theta}};
    }
  }

  {
    json po = j.value("positivity", json::object());
    detail::reject_unknown_keys(po, "/positivity", {"matrices"});
    c.positivity_matrices =
        detail::string_or(po, "/positivity", "matrices", "model");
    if (c.positivity_matrices != "model" &&
        c.positivity_matrices != "qcle") {
      throw ConfigError("/positivity/matrices: expected 'model' or 'qcle'");
    }
    if (mode == RunMode::check_positivity) {
      r["positivity"] = {{"matrices", c.positivity_matrices}};
    }
  }

  {
    json o = j.value("output", json::object());
    detail::reject_unknown_keys(o, "/output", {"dir", "snapshot", "marginal"});
    c.out_dir = detail::string_or(o, "/output", "dir", "out");
    c.write_final_snapshot = detail::bool_or(o, "/output", "snapshot", false);
    c.write_final_marginal = detail::bool_or(o, "/output", "marginal", false);
  }
  if (const char* env = std::getenv("CQLIMIT_OUT"); env != nullptr &&
      *env != '\0') {
    c.out_dir = env;
  }
  if (ov.out_dir) c.out_dir = *ov.out_dir;
  // The echo deliberately omits the output directory and the thread cap:
  // neither influences the emitted bytes (reductions are thread-count
  // invariant), so manifests stay comparable across relocated or
  // differently parallelized reruns.
  r["output"] = {{"snapshot", c.write_final_snapshot},
                 {"marginal", c.write_final_marginal}};

  {
    const long long sd = detail::integer_or(j, "", "seed", 0);
    if (sd < 0) throw ConfigError("/seed: expected integer >= 0");
    c.seed = static_cast<std::uint64_t>(sd);
    if (ov.seed) c.seed = *ov.seed;
    c.threads = static_cast<int>(detail::integer_or(j, "", "threads", 0));
    if (c.threads < 0) throw ConfigError("/threads: expected integer >= 0");
    if (ov.threads) c.threads = *ov.threads;
    r["seed"] = c.seed;
  }

  return c;
}

inline RunConfig parse_config(const std::string& path, RunMode mode,
                              const CliOverrides& ov = {}) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("/: config is not valid JSON: ") + e.what());
  }
  return parse_config_json(j, mode, ov);
}

// ---------------------------------------------------------------------------
// Artifact emission

// Collects the files a run emits and finishes with a manifest.json that
// echoes the resolved config and lists a SHA-256 digest per file.  No
// timestamps or machine identifiers: reruns of the same config and seed
// must produce byte-identical manifests.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(const std::string& dir) : dir_(dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) {
      throw IoError("cannot create output directory: " + dir_ + " (" +
                    ec.message() + ")");
    }
  }

  std::string path(const std::string& name) const {
    return (std::filesystem::path(dir_) / name).string();
  }

  void write_text(const std::string& name, const std::string& content) {
    const std::string p = path(name);
    std::ofstream os(p, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + p);
    os << content;
    os.flush();
    if (!os) throw IoError("short write: " + p);
    emitted_.push_back(name);
  }

  // Registers a file written through another helper.
  void note(const std::string& name) { emitted_.push_back(name); }

  void write_manifest(const nlohmann::json& resolved_config) {
    nlohmann::json m;
    m["artifact_format"] = 1;
    m["code_version"] = kCodeVersion;
    m["config"] = resolved_config;
    nlohmann::json outs = nlohmann::json::object();
    std::sort(emitted_.begin(), emitted_.end());
    for (const auto& name : emitted_) {
      outs[name] = sha256_file(path(name));
    }
    m["outputs"] = outs;
    const std::string p = path("manifest.json");
    std::ofstream os(p, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + p);
    os << m.dump(2) << "\n";
    os.flush();
    if (!os) throw IoError("short write: " + p);
  }

 private:
  std::string dir_;
  std::vector<std::string> emitted_;
};

// ---------------------------------------------------------------------------
// Mode runners

namespace detail {

inline int run_cnm_table(const RunConfig& cfg, std::ostream& log) {
  ArtifactWriter w(cfg.out_dir);
  std::string csv;
  for (int shell = 0; shell <= cfg.cnm_n_max; ++shell) {
    for (int m = 0; m <= shell; ++m) {
      if (m > 0) csv += ",";
      csv += std::to_string(cnm(shell - m, m));
    }
    csv += "\n";
  }
  w.write_text("cnm_table.csv", csv);
  w.write_manifest(cfg.resolved);
  log << "cnm-table: wrote shells 0.." << cfg.cnm_n_max << " to "
      << w.path("cnm_table.csv") << "\n";
  return 0;
}

inline int run_check_positivity(const RunConfig& cfg, std::ostream& log) {
  ArtifactWriter w(cfg.out_dir);
  Matrix d0, d1, d2;
  if (cfg.positivity_matrices == "qcle") {
    d0 = Matrix::Zero(2, 2);
    d1 = 0.5 * identity(2);
    d2 = Matrix::Zero(2, 2);
  } else {
    DMatrices m = d_matrices(cfg.params);
    d0 = m.d0;
    d1 = m.d1;
    d2 = m.d2;
  }
  TradeoffReport rep = tradeoff_check(d0, d1, d2);
  const double scale = std::max(1.0, d0.norm());
  const bool saturated =
      rep.satisfied && std::abs(rep.positivity_margin) <= 1e-10 * scale;
  nlohmann::json out = {{"matrices", cfg.positivity_matrices},
                        {"satisfied", rep.satisfied},
                        {"saturated", saturated},
                        {"positivity_margin", rep.positivity_margin},
                        {"range_defect", rep.range_defect}};
  w.write_text("positivity.json", out.dump(2) + "\n");
  w.write_manifest(cfg.resolved);
  if (rep.satisfied) {
    log << "check-positivity: trade-off satisfied (margin "
        << rep.positivity_margin << (saturated ? ", saturated" : "") << ")\n";
    return 0;
  }
  log << "check-positivity: trade-off VIOLATED (margin "
      << rep.positivity_margin << ", range defect " << rep.range_defect
      << ")\n";
  return 2;
}

inline int run_evolve(const RunConfig& cfg, std::ostream& log) {
  ArtifactWriter w(cfg.out_dir);
  OperatorField state =
      coherent_product_state(cfg.grid, cfg.psi, cfg.q0, cfg.p0, cfg.params);
  EvolverCache cache =
      build_evolver_cache(*cfg.model, cfg.params, cfg.grid, cfg.generator);

  std::string csv =
      "t,total_trace,mean_q,mean_p,var_q,var_p,quantum_purity,"
      "min_eigenvalue,peak_weight,hermiticity_defect\n";
  auto add_row = [&](double t, const FieldDiagnostics& d) {
    csv += g17(t) + "," + g17(d.total_trace) + "," + g17(d.mean_q) + "," +
           g17(d.mean_p) + "," + g17(d.var_q) + "," + g17(d.var_p) + "," +
           g17(d.purity) + "," + g17(d.min_eigenvalue) + "," +
           g17(d.peak_weight) + "," + g17(d.hermiticity_defect) + "\n";
  };
  add_row(0.0, diagnostics(state));

  const double seg = cfg.t_final / cfg.checkpoints;
  double dt_used = 0.0;
  long steps = 0;
  bool used_split = false;
  for (int k = 1; k <= cfg.checkpoints; ++k) {
    EvolveOptions opt;
    opt.t_final = seg;
    opt.dt = cfg.dt;
    EvolveResult res = evolve(cache, state, opt);
    state = std::move(res.state);
    dt_used = res.dt;
    steps += res.steps;
    used_split = used_split || res.used_split;
    add_row(seg * k, diagnostics(state));
  }
  w.write_text("timeseries.csv", csv);

  FieldDiagnostics fin = diagnostics(state);
  nlohmann::json summary = {
      {"generator", to_string(cfg.generator)},
      {"t_final", cfg.t_final},
      {"step", {{"dt", dt_used},
                {"steps", steps},
                {"split_unitary", used_split}}},
      {"final",
       {{"total_trace", fin.total_trace},
        {"mean_q", fin.mean_q},
        {"mean_p", fin.mean_p},
        {"var_q", fin.var_q},
        {"var_p", fin.var_p},
        {"quantum_purity", fin.purity},
        {"min_eigenvalue", fin.min_eigenvalue},
        {"peak_weight", fin.peak_weight},
        {"hermiticity_defect", fin.hermiticity_defect},
        {"partial_state", matrix_to_json(fin.partial_state)}}}};
  w.write_text("summary.json", summary.dump(2) + "\n");

  if (cfg.write_final_snapshot) {
    write_snapshot(state, w.path("final_state.cqf"));
    w.note("final_state.cqf");
  }
  if (cfg.write_final_marginal) {
    write_classical_marginal(state, w.path("final_marginal.csv"));
    w.note("final_marginal.csv");
  }
  w.write_manifest(cfg.resolved);
  log << "evolve: " << steps << " steps at dt " << dt_used
      << ", final trace " << fin.total_trace << "\n";
  return 0;
}

inline int run_unravel(const RunConfig& cfg, std::ostream& log) {
  ArtifactWriter w(cfg.out_dir);
  std::optional<GeneratorProvider> provider;
  if (cfg.lattice) {
    provider.emplace(cfg.model, cfg.params, cfg.grid);
  } else {
    provider.emplace(cfg.model, cfg.params);
  }

  const int dim = cfg.model->dim();
  EnsembleOptions opt;
  opt.n_traj = cfg.n_traj;
  opt.t_final = cfg.t_final;
  opt.dt = cfg.dt;
  opt.seed = cfg.seed;
  opt.threads = cfg.threads;
  opt.checkpoints = cfg.checkpoints;
  opt.renormalize = cfg.renormalize;
  opt.init_var_q = cfg.init_var_q;
  opt.init_var_p = cfg.init_var_p;
  for (const std::string& name : cfg.observable_names) {
    opt.observables.push_back(
        observable_matrix(name, dim, "/unravel/observables"));
  }
  opt.record = cfg.record;

  TrajectoryState init;
  init.q = cfg.q0;
  init.p = cfg.p0;
  init.psi = cfg.psi;
  EnsembleResult res = run_ensemble(*provider, init, opt);

  nlohmann::json cps = nlohmann::json::array();
  for (const CheckpointStats& cp : res.checkpoints) {
    nlohmann::json row = {{"t", cp.t},
                          {"mean_q", cp.mean_q},
                          {"se_q", cp.se_q},
                          {"mean_p", cp.mean_p},
                          {"se_p", cp.se_p},
                          {"var_q", cp.var_q},
                          {"var_p", cp.var_p},
                          {"mean_purity", cp.mean_purity},
                          {"se_purity", cp.se_purity},
                          {"mean_purity_defect", cp.mean_purity_defect},
                          {"max_purity_defect", cp.max_purity_defect}};
    nlohmann::json obs = nlohmann::json::object();
    for (std::size_t i = 0; i < cfg.observable_names.size(); ++i) {
      obs[cfg.observable_names[i]] = {{"mean", cp.obs_mean[i]},
                                      {"se", cp.obs_se[i]}};
    }
    row["observables"] = obs;
    cps.push_back(row);
  }
  nlohmann::json summary = {{"n_traj", res.n_traj},
                            {"t_final", cfg.t_final},
                            {"dt", res.dt},
                            {"seed", res.seed},
                            {"renormalize", cfg.renormalize},
                            {"lattice", cfg.lattice},
                            {"init_var_q", cfg.init_var_q},
                            {"init_var_p", cfg.init_var_p},
                            {"checkpoints", cps}};
  w.write_text("summary.json", summary.dump(2) + "\n");

  if (!res.recorded.empty()) {
    std::string csv = "t,trajectory,q,p";
    for (int k = 0; k < dim; ++k) {
      csv += ",psi" + std::to_string(k) + "_re,psi" + std::to_string(k) +
             "_im";
    }
    csv += "\n";
    for (std::size_t k = 0; k < res.recorded.size(); ++k) {
      for (const RecordedPoint& pt : res.recorded[k]) {
        csv += g17(pt.t) + "," + std::to_string(cfg.record[k]) + "," +
               g17(pt.q) + "," + g17(pt.p);
        for (long i = 0; i < pt.psi.size(); ++i) {
          csv += "," + g17(pt.psi(i).real()) + "," + g17(pt.psi(i).imag());
        }
        csv += "\n";
      }
    }
    w.write_text("trajectories.csv", csv);
  }

  w.write_manifest(cfg.resolved);
  const CheckpointStats& last = res.checkpoints.back();
  log << "unravel: " << res.n_traj << " trajectories to t = " << cfg.t_final
      << ", final <q> = " << last.mean_q << " +- " << last.se_q
      << ", mean purity defect " << last.mean_purity_defect << "\n";
  return 0;
}

inline int run_trotter_convergence(const RunConfig& cfg, std::ostream& log) {
  ArtifactWriter w(cfg.out_dir);
  OperatorField initial =
      coherent_product_state(cfg.grid, cfg.psi, cfg.q0, cfg.p0, cfg.params);
  ConvergenceStudy study =
      convergence_study(*cfg.model, cfg.params, cfg.grid, initial,
                        cfg.t_final, cfg.taus, cfg.ordering);

  std::string csv = "tau,l1_error\n";
  nlohmann::json pts = nlohmann::json::array();
  for (const ConvergencePoint& pt : study.points) {
    csv += g17(pt.tau) + "," + g17(pt.l1_error) + "\n";
    pts.push_back({{"tau", pt.tau}, {"l1_error", pt.l1_error}});
  }
  w.write_text("convergence.csv", csv);
  nlohmann::json summary = {{"ordering", to_string(cfg.ordering)},
                            {"t_final", cfg.t_final},
                            {"reference_tau", study.reference_tau},
                            {"slope", study.slope},
                            {"points", pts}};
  w.write_text("summary.json", summary.dump(2) + "\n");
  w.write_manifest(cfg.resolved);
  log << "trotter-convergence: slope " << study.slope << " over "
      << study.points.size() << " step sizes\n";
  return 0;
}

inline int run_ho_oracle(const RunConfig& cfg, std::ostream& log) {
  ArtifactWriter w(cfg.out_dir);
  const OracleSpec& sp = cfg.oracle;
  std::string csv = "E,lambda,m_q,theta,rel_err_l_q,rel_err_l_p,rel_err_h_eff\n";
  int checked = 0, skipped = 0;
  double max_l = 0.0, max_h = 0.0;
  bool ok = true;
  const int f = sp.fock_dim;
  auto rel = [f](const Matrix& a, const Matrix& b) {
    const double den = std::max(b.topLeftCorner(f, f).norm(), 1e-12);
    return (a.topLeftCorner(f, f) - b.topLeftCorner(f, f)).norm() / den;
  };

  for (double e_val : sp.e_values) {
    for (double lam : sp.lambda_values) {
      for (double mq : sp.m_q_values) {
        Params pr = cfg.params;
        pr.E = e_val;
        const double theta =
            std::sqrt(lam) * pr.hbar / (pr.E * std::sqrt(mq));
        if (theta > sp.max_theta) {
          ++skipped;
          continue;
        }
        CoupledOscillators ham(sp.m_c, mq, lam, f + sp.padding, pr.hbar);
        LindbladPair series =
            lindblad_ops(ham, pr, sp.q, sp.p, /*prefer_closed_form=*/false);
        HeffOptions hopt;
        hopt.prefer_closed_form = false;
        Matrix he_series = h_eff(ham, pr, sp.q, sp.p, hopt);
        HoClosedForms closed = ho_closed_forms(ham, pr, sp.q, sp.p);

        const double el_q = rel(series.l_q, closed.l_q);
        const double el_p = rel(series.l_p, closed.l_p);
        const double eh = rel(he_series, closed.h_eff);
        csv += g17(e_val) + "," + g17(lam) + "," + g17(mq) + "," +
               g17(theta) + "," + g17(el_q) + "," + g17(el_p) + "," +
               g17(eh) + "\n";
        ++checked;
        max_l = std::max({max_l, el_q, el_p});
        max_h = std::max(max_h, eh);
        if (el_q > sp.tol_lindblad || el_p > sp.tol_lindblad ||
            eh > sp.tol_h_eff) {
          ok = false;
        }
      }
    }
  }
  if (checked == 0) {
    throw ConfigError(
        "/oracle: no parameter combination satisfies max_theta; widen the "
        "lists or raise max_theta");
  }

  w.write_text("ho_oracle.csv", csv);
  nlohmann::json summary = {{"n_checked", checked},
                            {"n_skipped", skipped},
                            {"max_rel_err_lindblad", max_l},
                            {"max_rel_err_h_eff", max_h},
                            {"tol_lindblad", sp.tol_lindblad},
                            {"tol_h_eff", sp.tol_h_eff},
                            {"within_tolerance", ok}};
  w.write_text("summary.json", summary.dump(2) + "\n");
  w.write_manifest(cfg.resolved);
  log << "ho-oracle: " << checked << " combinations, max relative error "
      << max_l << " (dissipators) / " << max_h << " (effective Hamiltonian)"
      << (ok ? "" : " — TOLERANCE EXCEEDED") << "\n";
  return ok ? 0 : 2;
}

}  // namespace detail

inline int run(const RunConfig& cfg, std::ostream& log = std::cout) {
  switch (cfg.mode) {
    case RunMode::evolve: return detail::run_evolve(cfg, log);
    case RunMode::unravel: return detail::run_unravel(cfg, log);
    case RunMode::check_positivity:
      return detail::run_check_positivity(cfg, log);
    case RunMode::trotter_convergence:
      return detail::run_trotter_convergence(cfg, log);
    case RunMode::cnm_table: return detail::run_cnm_table(cfg, log);
    case RunMode::ho_oracle: return detail::run_ho_oracle(cfg, log);
  }
  throw InvariantError("unknown run mode");
}

}  // namespace cq
