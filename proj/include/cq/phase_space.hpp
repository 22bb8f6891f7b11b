// Phase-space discretization: operator-valued fields on a rectangular
// (q, p) grid, Gaussian smoothing via FFT, finite-difference derivatives,
// truncated star products, diagnostics, and binary/CSV output.
#pragma once

#include <fftw3.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cq/common.hpp"
#include "cq/generator.hpp"
#include "cq/hamiltonian.hpp"
#include "cq/operator_algebra.hpp"

namespace cq {

enum class Boundary { periodic, clamped };

// Uniform rectangular grid. Points are q_i = q_min + i dq with
// dq = (q_max - q_min) / n_q; the right edge is excluded so periodic
// wrap-around is seamless.
struct PhaseGrid {
  int n_q = 0;
  int n_p = 0;
  double q_min = 0.0, q_max = 0.0;
  double p_min = 0.0, p_max = 0.0;
  Boundary boundary = Boundary::periodic;

  double dq() const { return (q_max - q_min) / n_q; }
  double dp() const { return (p_max - p_min) / n_p; }
  double q(int i) const { return q_min + i * dq(); }
  double p(int j) const { return p_min + j * dp(); }
  double cell() const { return dq() * dp(); }
  long size() const { return static_cast<long>(n_q) * n_p; }

  void validate() const {
    if (n_q < 4 || n_p < 4) {
      throw ConfigError("/grid: expected at least 4 points per axis");
    }
    if (!(q_max > q_min) || !(p_max > p_min)) {
      throw ConfigError("/grid: expected q_max > q_min and p_max > p_min");
    }
  }

  bool same_geometry(const PhaseGrid& o) const {
    return n_q == o.n_q && n_p == o.n_p && q_min == o.q_min &&
           q_max == o.q_max && p_min == o.p_min && p_max == o.p_max &&
           boundary == o.boundary;
  }
};

// A d x d complex matrix attached to every grid point, stored flat so
// whole-field arithmetic is a single vectorized pass. Matrices are
// column-major within their block; points run p-fastest.
class OperatorField {
 public:
  OperatorField() = default;
  OperatorField(const PhaseGrid& grid, int dim)
      : grid_(grid), dim_(dim),
        data_(static_cast<size_t>(grid.size()) * dim * dim,
              Complex{0.0, 0.0}) {
    grid.validate();
    if (dim < 1) throw InvariantError("OperatorField: dim must be >= 1");
  }

  const PhaseGrid& grid() const { return grid_; }
  int dim() const { return dim_; }
  long block() const { return static_cast<long>(dim_) * dim_; }

  Eigen::Map<Matrix> at(int i, int j) {
    return {data_.data() + offset(i, j), dim_, dim_};
  }
  Eigen::Map<const Matrix> at(int i, int j) const {
    return {data_.data() + offset(i, j), dim_, dim_};
  }

  Complex* data() { return data_.data(); }
  const Complex* data() const { return data_.data(); }
  size_t flat_size() const { return data_.size(); }

  void set_zero() { std::fill(data_.begin(), data_.end(), Complex{0, 0}); }

  // this += a * other
  void add_scaled(Complex a, const OperatorField& other) {
    check_compatible(other);
    Eigen::Map<Vector> self(data_.data(), data_.size());
    Eigen::Map<const Vector> rhs(other.data_.data(), other.data_.size());
    self += a * rhs;
  }

  void scale(Complex a) {
    Eigen::Map<Vector> self(data_.data(), data_.size());
    self *= a;
  }

  double max_entry_abs() const {
    Eigen::Map<const Vector> self(data_.data(), data_.size());
    return self.cwiseAbs().maxCoeff();
  }

  double frobenius() const {
    Eigen::Map<const Vector> self(data_.data(), data_.size());
    return self.norm();
  }

  void check_compatible(const OperatorField& other) const {
    if (dim_ != other.dim_ || !grid_.same_geometry(other.grid_)) {
      throw InvariantError("OperatorField: incompatible field shapes");
    }
  }

 private:
  long offset(int i, int j) const {
    return (static_cast<long>(i) * grid_.n_p + j) * block();
  }

  PhaseGrid grid_;
  int dim_ = 0;
  std::vector<Complex> data_;
};

// Product initial condition: a normalized classical Gaussian centered at
// (q0, p0) with the squeezing-matched covariance var_q = hbar s^2 / 2,
// var_p = hbar / (2 s^2), times the projector |psi><psi|.
inline OperatorField coherent_product_state(const PhaseGrid& grid,
                                            const Vector& psi, double q0,
                                            double p0, const Params& pr) {
  pr.validate();
  grid.validate();
  const double var_q = pr.hbar * pr.s * pr.s / 2.0;
  const double var_p = pr.hbar / (2.0 * pr.s * pr.s);
  const double sig_q = std::sqrt(var_q), sig_p = std::sqrt(var_p);

  if (sig_q < 2.0 * grid.dq() || sig_p < 2.0 * grid.dp()) {
    throw ConfigError(
        "/initial: packet width under 2 grid spacings; refine the grid or "
        "increase hbar * s^2 (q) or hbar / s^2 (p)");
  }
  if (q0 - 4 * sig_q < grid.q_min || q0 + 4 * sig_q > grid.q_max ||
      p0 - 4 * sig_p < grid.p_min || p0 + 4 * sig_p > grid.p_max) {
    throw ConfigError(
        "/initial: packet center closer than 4 widths to a grid edge");
  }

  Vector unit = psi / psi.norm();
  Matrix proj = unit * unit.adjoint();
  const int d = static_cast<int>(psi.size());

  OperatorField field(grid, d);
  double total = 0.0;
  for (int i = 0; i < grid.n_q; ++i) {
    const double xq = grid.q(i) - q0;
    for (int j = 0; j < grid.n_p; ++j) {
      const double xp = grid.p(j) - p0;
      double w = std::exp(-0.5 * (xq * xq / var_q + xp * xp / var_p));
      field.at(i, j) = w * proj;
      total += w;
    }
  }
  // Normalize the grid sum exactly: integral tr(rho) dq dp = 1.
  field.scale(1.0 / (total * grid.cell()));
  return field;
}

namespace detail {

inline std::vector<double> fft_wavenumbers(int n, double length) {
  std::vector<double> k(n);
  for (int i = 0; i < n; ++i) {
    int f = (i <= n / 2) ? i : i - n;
    k[i] = 2.0 * kPi * f / length;
  }
  return k;
}

}  // namespace detail

// Gaussian smoothing in phase space, applied entrywise through the FFT.
// The Fourier multiplier is exp(-alpha [ (hbar s^2 / 2) k_q^2
// + (hbar / 2 s^2) k_p^2 ]), i.e. convolution with a Gaussian of variance
// alpha hbar s^2 in q and alpha hbar / s^2 in p. Negative alpha deconvolves;
// modes whose forward multiplier is below 1e-8 are zeroed instead of
// amplified, and the call fails if they hold more than 1e-4 of the energy.
inline OperatorField weierstrass_transform(const OperatorField& field,
                                           const Params& pr, double alpha) {
  const PhaseGrid& g = field.grid();
  if (g.boundary != Boundary::periodic) {
    throw InvariantError("weierstrass_transform requires a periodic grid");
  }
  const int nq = g.n_q, np = g.n_p, d = field.dim();
  const double s2 = pr.s * pr.s;

  std::vector<double> kq = detail::fft_wavenumbers(nq, g.q_max - g.q_min);
  std::vector<double> kp = detail::fft_wavenumbers(np, g.p_max - g.p_min);

  std::vector<double> beta(static_cast<size_t>(nq) * np);
  for (int i = 0; i < nq; ++i) {
    for (int j = 0; j < np; ++j) {
      beta[static_cast<size_t>(i) * np + j] =
          pr.hbar * s2 / 2.0 * kq[i] * kq[i] +
          pr.hbar / (2.0 * s2) * kp[j] * kp[j];
    }
  }

  const bool deconvolving = alpha < 0.0;
  const double amag = std::abs(alpha);

  OperatorField out(g, d);
  std::vector<Complex> buf(static_cast<size_t>(nq) * np);
  fftw_complex* fbuf = reinterpret_cast<fftw_complex*>(buf.data());
  fftw_plan fwd = fftw_plan_dft_2d(nq, np, fbuf, fbuf, FFTW_FORWARD,
                                   FFTW_ESTIMATE);
  fftw_plan bwd = fftw_plan_dft_2d(nq, np, fbuf, fbuf, FFTW_BACKWARD,
                                   FFTW_ESTIMATE);

  const double inv_n = 1.0 / (static_cast<double>(nq) * np);
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < d; ++c) {
      for (int i = 0; i < nq; ++i) {
        for (int j = 0; j < np; ++j) {
          buf[static_cast<size_t>(i) * np + j] = field.at(i, j)(r, c);
        }
      }
      fftw_execute(fwd);
      double clipped = 0.0, total = 0.0;
      for (size_t m = 0; m < buf.size(); ++m) {
        const double power = std::norm(buf[m]);
        total += power;
        if (deconvolving && std::exp(-amag * beta[m]) < 1e-8) {
          buf[m] = Complex{0.0, 0.0};
          clipped += power;
        } else {
          buf[m] *= std::exp(-alpha * beta[m]);
        }
      }
      if (deconvolving && total > 0.0 && clipped > 1e-4 * total) {
        fftw_destroy_plan(fwd);
        fftw_destroy_plan(bwd);
        throw InvariantError(
            "weierstrass_transform: deconvolution would amplify modes "
            "carrying over 1e-4 of the energy");
      }
      fftw_execute(bwd);
      for (int i = 0; i < nq; ++i) {
        for (int j = 0; j < np; ++j) {
          out.at(i, j)(r, c) = buf[static_cast<size_t>(i) * np + j] * inv_n;
        }
      }
    }
  }
  fftw_destroy_plan(fwd);
  fftw_destroy_plan(bwd);
  return out;
}

enum class Axis { q, p };

// Central finite differences of the requested order (1 or 2). Periodic
// grids wrap; clamped grids use second-order one-sided stencils at the
// edges. On periodic grids the first-derivative stencil telescopes, so
// grid sums of derivatives vanish to round-off.
inline OperatorField fd_deriv(const OperatorField& field, Axis axis,
                              int order) {
  if (order != 1 && order != 2) {
    throw InvariantError("fd_deriv: order must be 1 or 2");
  }
  const PhaseGrid& g = field.grid();
  const bool periodic = g.boundary == Boundary::periodic;
  const int n = (axis == Axis::q) ? g.n_q : g.n_p;
  const double h = (axis == Axis::q) ? g.dq() : g.dp();

  OperatorField out(g, field.dim());
  auto point = [&](int along, int other) -> std::pair<int, int> {
    return (axis == Axis::q) ? std::make_pair(along, other)
                             : std::make_pair(other, along);
  };
  const int n_other = (axis == Axis::q) ? g.n_p : g.n_q;

  for (int o = 0; o < n_other; ++o) {
    for (int i = 0; i < n; ++i) {
      auto [oi, oj] = point(i, o);
      auto dst = out.at(oi, oj);
      auto src = [&](int idx) {
        auto [si, sj] = point(idx, o);
        return field.at(si, sj);
      };
      if (periodic) {
        const int ip = (i + 1) % n, im = (i + n - 1) % n;
        if (order == 1) {
          dst = (src(ip) - src(im)) / (2.0 * h);
        } else {
          dst = (src(ip) - 2.0 * src(i) + src(im)) / (h * h);
        }
      } else {
        if (order == 1) {
          if (i == 0) {
            dst = (-3.0 * src(0) + 4.0 * src(1) - src(2)) / (2.0 * h);
          } else if (i == n - 1) {
            dst = (3.0 * src(n - 1) - 4.0 * src(n - 2) + src(n - 3)) /
                  (2.0 * h);
          } else {
            dst = (src(i + 1) - src(i - 1)) / (2.0 * h);
          }
        } else {
          if (i == 0) {
            dst = (2.0 * src(0) - 5.0 * src(1) + 4.0 * src(2) - src(3)) /
                  (h * h);
          } else if (i == n - 1) {
            dst = (2.0 * src(n - 1) - 5.0 * src(n - 2) + 4.0 * src(n - 3) -
                   src(n - 4)) / (h * h);
          } else {
            dst = (src(i + 1) - 2.0 * src(i) + src(i - 1)) / (h * h);
          }
        }
      }
    }
  }
  return out;
}

// Star product truncated at total derivative order K (K <= 4):
//   f * g = sum_{k=0}^{K} (1/k!) (i hbar / 2)^k
//           sum_{j=0}^{k} binom(k, j) (-1)^j
//           (d_q^{k-j} d_p^j f)(d_q^j d_p^{k-j} g)
// evaluated with matrix products at every grid point.
inline OperatorField moyal_star(const OperatorField& f,
                                const OperatorField& g, const Params& pr,
                                int max_order) {
  f.check_compatible(g);
  if (max_order < 0 || max_order > 4) {
    throw InvariantError("moyal_star: truncation order must be in [0, 4]");
  }
  const PhaseGrid& grid = f.grid();

  // derivs[a][b] = d_q^a d_p^b of the input, built by repeated stencils.
  auto build_derivs = [&](const OperatorField& x) {
    std::vector<std::vector<OperatorField>> dv(
        max_order + 1, std::vector<OperatorField>(max_order + 1));
    dv[0][0] = x;
    for (int a = 0; a <= max_order; ++a) {
      for (int b = 0; b <= max_order - a; ++b) {
        if (a == 0 && b == 0) continue;
        dv[a][b] = (a > 0) ? fd_deriv(dv[a - 1][b], Axis::q, 1)
                           : fd_deriv(dv[a][b - 1], Axis::p, 1);
      }
    }
    return dv;
  };
  auto df = build_derivs(f);
  auto dg = build_derivs(g);

  OperatorField out(grid, f.dim());
  double k_factorial = 1.0;
  for (int k = 0; k <= max_order; ++k) {
    if (k > 0) k_factorial *= k;
    const Complex pref = std::pow(kI * pr.hbar / 2.0, k) / k_factorial;
    for (int j = 0; j <= k; ++j) {
      const double sign = (j % 2 == 0) ? 1.0 : -1.0;
      const double binom =
          static_cast<double>(detail::binomial_i64(k, j));
      const Complex coef = pref * sign * binom;
      const OperatorField& lhs = df[k - j][j];
      const OperatorField& rhs = dg[j][k - j];
      for (int i = 0; i < grid.n_q; ++i) {
        for (int jj = 0; jj < grid.n_p; ++jj) {
          out.at(i, jj) += coef * (lhs.at(i, jj) * rhs.at(i, jj)).eval();
        }
      }
    }
  }
  return out;
}

struct FieldDiagnostics {
  double total_trace = 0.0;       // integral of tr M dq dp
  double mean_q = 0.0, mean_p = 0.0;
  double var_q = 0.0, var_p = 0.0;
  double min_eigenvalue = 0.0;    // most negative pointwise Hermitian eig
  double peak_weight = 0.0;       // max over points of tr M
  double hermiticity_defect = 0.0;
  Matrix partial_state;           // integral of M dq dp (quantum state)
  double purity = 0.0;            // tr(partial_state^2)
};

inline FieldDiagnostics diagnostics(const OperatorField& field) {
  const PhaseGrid& g = field.grid();
  const int d = field.dim();
  FieldDiagnostics out;
  out.partial_state = Matrix::Zero(d, d);
  out.min_eigenvalue = std::numeric_limits<double>::infinity();

  double w_sum = 0.0, q_sum = 0.0, p_sum = 0.0, qq_sum = 0.0, pp_sum = 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es;
  for (int i = 0; i < g.n_q; ++i) {
    const double q = g.q(i);
    for (int j = 0; j < g.n_p; ++j) {
      const double p = g.p(j);
      Matrix m = field.at(i, j);
      out.partial_state += m;
      const double w = m.trace().real();
      w_sum += w;
      q_sum += w * q;
      p_sum += w * p;
      qq_sum += w * q * q;
      pp_sum += w * p * p;
      out.peak_weight = std::max(out.peak_weight, w);
      out.hermiticity_defect =
          std::max(out.hermiticity_defect, cq::hermiticity_defect(m));
      es.compute(hermitian_part(m), Eigen::EigenvaluesOnly);
      out.min_eigenvalue =
          std::min(out.min_eigenvalue, es.eigenvalues().minCoeff());
    }
  }
  out.partial_state *= g.cell();
  out.total_trace = w_sum * g.cell();
  if (w_sum != 0.0) {
    out.mean_q = q_sum / w_sum;
    out.mean_p = p_sum / w_sum;
    out.var_q = qq_sum / w_sum - out.mean_q * out.mean_q;
    out.var_p = pp_sum / w_sum - out.mean_p * out.mean_p;
  }
  out.purity = (out.partial_state * out.partial_state).trace().real();
  return out;
}

// Binary snapshot format:
//   bytes 0..3   magic "CQF1"
//   uint32       n_q, n_p, dim
//   float64      q_min, q_max, p_min, p_max
//   complex128   matrix entries, index order [iq][ip][row][col]
// All fields little-endian; grids restored as periodic.
inline void write_snapshot(const OperatorField& field,
                           const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open snapshot for writing: " + path);
  const PhaseGrid& g = field.grid();
  os.write("CQF1", 4);
  std::array<std::uint32_t, 3> dims = {static_cast<std::uint32_t>(g.n_q),
                                       static_cast<std::uint32_t>(g.n_p),
                                       static_cast<std::uint32_t>(field.dim())};
  os.write(reinterpret_cast<const char*>(dims.data()), sizeof(dims));
  std::array<double, 4> bounds = {g.q_min, g.q_max, g.p_min, g.p_max};
  os.write(reinterpret_cast<const char*>(bounds.data()), sizeof(bounds));
  const int d = field.dim();
  std::vector<Complex> row(static_cast<size_t>(d) * d);
  for (int i = 0; i < g.n_q; ++i) {
    for (int j = 0; j < g.n_p; ++j) {
      auto m = field.at(i, j);
      size_t idx = 0;
      for (int r = 0; r < d; ++r) {
        for (int c = 0; c < d; ++c) row[idx++] = m(r, c);
      }
      os.write(reinterpret_cast<const char*>(row.data()),
               static_cast<std::streamsize>(row.size() * sizeof(Complex)));
    }
  }
  if (!os) throw IoError("short write on snapshot: " + path);
}

inline OperatorField read_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open snapshot for reading: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CQF1", 4) != 0) {
    throw IoError("bad snapshot magic in " + path);
  }
  std::array<std::uint32_t, 3> dims;
  is.read(reinterpret_cast<char*>(dims.data()), sizeof(dims));
  std::array<double, 4> bounds;
  is.read(reinterpret_cast<char*>(bounds.data()), sizeof(bounds));
  if (!is) throw IoError("truncated snapshot header in " + path);
  if (dims[0] < 4 || dims[0] > 1000000 || dims[1] < 4 ||
      dims[1] > 1000000 || dims[2] < 1 || dims[2] > 10000) {
    throw IoError("implausible snapshot dimensions in " + path);
  }

  PhaseGrid g;
  g.n_q = static_cast<int>(dims[0]);
  g.n_p = static_cast<int>(dims[1]);
  g.q_min = bounds[0];
  g.q_max = bounds[1];
  g.p_min = bounds[2];
  g.p_max = bounds[3];
  g.boundary = Boundary::periodic;

  const int d = static_cast<int>(dims[2]);
  OperatorField field(g, d);
  std::vector<Complex> row(static_cast<size_t>(d) * d);
  for (int i = 0; i < g.n_q; ++i) {
    for (int j = 0; j < g.n_p; ++j) {
      is.read(reinterpret_cast<char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(Complex)));
      if (!is) throw IoError("truncated snapshot data in " + path);
      auto m = field.at(i, j);
      size_t idx = 0;
      for (int r = 0; r < d; ++r) {
        for (int c = 0; c < d; ++c) m(r, c) = row[idx++];
      }
    }
  }
  is.peek();
  if (!is.eof()) throw IoError("trailing bytes in snapshot " + path);
  return field;
}

// Classical weight tr M(q, p) as CSV with full float precision.
inline void write_classical_marginal(const OperatorField& field,
                                     const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open marginal CSV for writing: " + path);
  os << "q,p,weight\n";
  char line[128];
  const PhaseGrid& g = field.grid();
  for (int i = 0; i < g.n_q; ++i) {
    for (int j = 0; j < g.n_p; ++j) {
      const double w = field.at(i, j).trace().real();
      std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g\n", g.q(i),
                    g.p(j), w);
      os << line;
    }
  }
  if (!os) throw IoError("short write on marginal CSV: " + path);
}

}  // namespace cq
