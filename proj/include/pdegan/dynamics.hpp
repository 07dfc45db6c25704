#pragma once

// Linearized GAN dynamics on a weighted Laplacian:
//   u_t = -alpha u - gamma (-Delta_mu) u + beta (1/rho) div(rho v),
//   v_t = beta grad u,
// evolved exactly through the eigen-expansion or with explicit integrators.
// Vector fields live on grid faces (see WeightedLaplacian).

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "pdegan/error.hpp"
#include "pdegan/laplace.hpp"
#include "pdegan/lgan.hpp"

namespace pdegan {

inline constexpr double kOverflowGuard = 1e150;
inline constexpr int kDefaultModes = 64;

struct FieldState {
  Eigen::VectorXd u; // nodes
  Eigen::VectorXd v; // faces
  double t = 0.0;
};

// Mean-zero potential V with K V = G^T W v, by a sparse LDLT of K with the
// heaviest node pinned.
class PotentialSolver {
public:
  explicit PotentialSolver(const WeightedLaplacian &op) : op_(&op) {
    const auto n = static_cast<Eigen::Index>(op.size());
    if (n > 1) {
      op.mass().maxCoeff(&pin_);
      // Maps node i to row i (i < pin) or i - 1 (i > pin) of the reduced system.
      std::vector<Eigen::Triplet<double>> trips;
      const SparseMatrix &k = op.stiffness();
      for (Eigen::Index c = 0; c < k.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(k, c); it; ++it)
          if (it.row() != pin_ && it.col() != pin_)
            trips.emplace_back(reduce(it.row()), reduce(it.col()), it.value());
      SparseMatrix reduced(n - 1, n - 1);
      reduced.setFromTriplets(trips.begin(), trips.end());
      solver_ = std::make_unique<Eigen::SimplicialLDLT<SparseMatrix>>(reduced);
      if (solver_->info() != Eigen::Success)
        fail("DegenerateSpectrum", "stiffness matrix is singular beyond its kernel");
    }
  }

  Eigen::VectorXd solve(const Eigen::VectorXd &v) const {
    const auto n = static_cast<Eigen::Index>(op_->size());
    Eigen::VectorXd pot = Eigen::VectorXd::Zero(n);
    if (n > 1) {
      const Eigen::VectorXd rhs = op_->weak_divergence(v);
      Eigen::VectorXd r(n - 1);
      for (Eigen::Index i = 0; i < n; ++i)
        if (i != pin_)
          r[reduce(i)] = rhs[i];
      const Eigen::VectorXd x = solver_->solve(r);
      for (Eigen::Index i = 0; i < n; ++i)
        if (i != pin_)
          pot[i] = x[reduce(i)];
    }
    pot.array() -= op_->mean(pot);
    return pot;
  }

private:
  Eigen::Index reduce(Eigen::Index i) const { return i < pin_ ? i : i - 1; }

  const WeightedLaplacian *op_;
  Eigen::Index pin_ = 0;
  std::unique_ptr<Eigen::SimplicialLDLT<SparseMatrix>> solver_;
};

struct HelmholtzParts {
  Eigen::VectorXd potential; // V_0, mean zero
  Eigen::VectorXd divfree;   // v_0 - grad V_0
  double residual = 0.0;     // |G^T W divfree|, max norm
};

namespace detail {

inline void check_field(const WeightedLaplacian &op, const Eigen::VectorXd &v) {
  if (static_cast<std::size_t>(v.size()) != op.face_count())
    fail("ShapeMismatch", "vector field must have one value per grid face");
  if (!v.allFinite())
    fail("ShapeMismatch", "vector field has non-finite entries");
}

inline void check_function(const WeightedLaplacian &op, const Eigen::VectorXd &u) {
  if (static_cast<std::size_t>(u.size()) != op.size())
    fail("ShapeMismatch", "grid function must have one value per node");
  if (!u.allFinite())
    fail("ShapeMismatch", "grid function has non-finite entries");
}

} // namespace detail

// Truncated spectral split: V_0 = sum_k w_k <v_0, grad w_k>_mu / xi_k over
// the nonzero modes of the spectrum.
inline HelmholtzParts helmholtz_decompose(const WeightedLaplacian &op,
                                          const LaplaceSpectrum &spec,
                                          const Eigen::VectorXd &v0) {
  detail::check_field(op, v0);
  const Eigen::VectorXd pairing = op.weak_divergence(v0);
  HelmholtzParts out;
  out.potential = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(op.size()));
  for (Eigen::Index k = 0; k < spec.count(); ++k) {
    if (spec.xis[k] <= kZeroModeThreshold)
      continue;
    const auto w = spec.eigenfunctions.col(k);
    out.potential += (w.dot(pairing) / spec.xis[k]) * w;
  }
  out.divfree = v0 - op.gradient(out.potential);
  out.residual = op.weak_divergence(out.divfree).cwiseAbs().maxCoeff();
  return out;
}

// Exact split through the sparse solve.
inline HelmholtzParts helmholtz_decompose(const WeightedLaplacian &op,
                                          const Eigen::VectorXd &v0) {
  detail::check_field(op, v0);
  HelmholtzParts out;
  out.potential = PotentialSolver(op).solve(v0);
  out.divfree = v0 - op.gradient(out.potential);
  out.residual = op.weak_divergence(out.divfree).cwiseAbs().maxCoeff();
  return out;
}

// Per-mode data: u-coefficient a_k(t), potential coefficient b_k(t) with
// v = sum_k b_k grad w_k + divfree, obeying
//   a' = -(alpha + gamma xi) a - beta xi b,  b' = beta a.
struct ModeCoefficients {
  double xi = 0.0;
  Complex lambda_plus, lambda_minus;
  // Distinct roots: a = c_plus e^{l+ t} + c_minus e^{l- t}.
  // Double root:    a = (c_plus + c_minus t) e^{l t}.
  Complex c_plus, c_minus;
  bool confluent = false;
};

struct ModeExpansion {
  LganCoefficients coeffs;
  double c0 = 0.0;
  std::vector<ModeCoefficients> modes;
  Eigen::MatrixXd eigenfunctions; // retained nonconstant modes, N x k
  Eigen::VectorXd potential;      // V_0 restricted to the retained modes
  Eigen::VectorXd divfree;        // exact divergence-free part of v_0
  double u_residual = 0.0;        // |u_0 - Pi_k u_0|_mu
  double v_residual = 0.0;        // |grad(V_0 - Pi_k V_0)|_W
};

inline ModeCoefficients project_mode(const LganCoefficients &coeffs, double xi,
                                     double a0, double b0) {
  const auto m = mode_eigenvalues(coeffs, xi);
  ModeCoefficients out;
  out.xi = xi;
  out.lambda_plus = m.plus;
  out.lambda_minus = m.minus;
  if (m.double_root) {
    // Jordan block: a(0) = p, a'(0) = lambda p + q.
    const double damping = coeffs.alpha + coeffs.gamma * xi;
    const double da0 = -damping * a0 - coeffs.beta * xi * b0;
    out.c_plus = a0;
    out.c_minus = da0 - m.plus * a0;
    out.confluent = true;
    return out;
  }
  // c+ + c- = a0, beta c+/l+ + beta c-/l- = b0.
  const Complex ip = 1.0 / m.plus, im = 1.0 / m.minus;
  const Complex det = coeffs.beta * (im - ip);
  out.c_plus = (coeffs.beta * im * a0 - b0) / det;
  out.c_minus = (b0 - coeffs.beta * ip * a0) / det;
  return out;
}

// Modes with xi_k <= kZeroModeThreshold are treated as the constant mode.
inline ModeExpansion project_initial_conditions(const WeightedLaplacian &op,
                                                const LaplaceSpectrum &spec,
                                                const Eigen::VectorXd &u0,
                                                const Eigen::VectorXd &v0,
                                                const LganCoefficients &coeffs,
                                                int k = kDefaultModes) {
  coeffs.validate();
  detail::check_function(op, u0);
  detail::check_field(op, v0);
  if (k < 0)
    fail("InvalidArgument", "mode count must be >= 0");
  ModeExpansion out;
  out.coeffs = coeffs;
  out.c0 = op.mean(u0);

  const auto exact = helmholtz_decompose(op, v0);
  out.divfree = exact.divfree;

  std::vector<Eigen::Index> keep;
  for (Eigen::Index c = 0; c < spec.count() && static_cast<int>(keep.size()) < k; ++c)
    if (spec.xis[c] > kZeroModeThreshold)
      keep.push_back(c);
  const auto n = static_cast<Eigen::Index>(op.size());
  out.eigenfunctions.resize(n, static_cast<Eigen::Index>(keep.size()));
  out.potential = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd u_proj = Eigen::VectorXd::Constant(n, out.c0);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const auto w = spec.eigenfunctions.col(keep[i]);
    out.eigenfunctions.col(static_cast<Eigen::Index>(i)) = w;
    const double a0 = op.inner(u0, w);
    const double b0 = op.inner(exact.potential, w);
    out.modes.push_back(project_mode(coeffs, spec.xis[keep[i]], a0, b0));
    u_proj += a0 * w;
    out.potential += b0 * w;
  }
  out.u_residual = op.norm(u0 - u_proj);
  out.v_residual = op.face_norm(op.gradient(exact.potential - out.potential));
  return out;
}

// Mode amplitudes (a_k(t), b_k(t)), real parts of the complex closed forms.
inline std::pair<double, double> mode_state(const ModeCoefficients &m,
                                            const LganCoefficients &coeffs,
                                            double t) {
  Complex a, da;
  if (m.confluent) {
    const Complex e = std::exp(m.lambda_plus * t);
    a = (m.c_plus + m.c_minus * t) * e;
    da = (m.c_minus + m.lambda_plus * (m.c_plus + m.c_minus * t)) * e;
  } else {
    const Complex ep = std::exp(m.lambda_plus * t);
    const Complex em = std::exp(m.lambda_minus * t);
    a = m.c_plus * ep + m.c_minus * em;
    da = m.lambda_plus * m.c_plus * ep + m.lambda_minus * m.c_minus * em;
  }
  const double damping = coeffs.alpha + coeffs.gamma * m.xi;
  const double b = -(da.real() + damping * a.real()) / (coeffs.beta * m.xi);
  return {a.real(), b};
}

struct SimulationTrace {
  std::vector<double> times;
  std::vector<double> u_norms;  // |u|_mu
  std::vector<double> V_norms;  // |V|_mu of the potential part of v
  std::vector<double> mean_u;   // <u, 1>_mu
  std::vector<double> energies; // |u|_mu^2 + |v - divfree|_W^2
  std::vector<FieldState> states;
  double measured_rate = std::numeric_limits<double>::quiet_NaN();
  bool diverged = false;
  bool cfl_warning = false;
};

// Least-squares slope of log |u| over the second half of the trace.
inline double fit_decay_rate(const std::vector<double> &times,
                             const std::vector<double> &norms) {
  const std::size_t n = std::min(times.size(), norms.size());
  double st = 0, sy = 0, stt = 0, sty = 0;
  std::size_t m = 0;
  for (std::size_t i = n / 2; i < n; ++i) {
    if (!(norms[i] > 0.0) || !std::isfinite(norms[i]))
      continue;
    const double y = std::log(norms[i]);
    st += times[i];
    sy += y;
    stt += times[i] * times[i];
    sty += times[i] * y;
    ++m;
  }
  if (m < 2)
    return std::numeric_limits<double>::quiet_NaN();
  const double den = m * stt - st * st;
  return den != 0.0 ? (m * sty - st * sy) / den
                    : std::numeric_limits<double>::quiet_NaN();
}

inline void check_times(const std::vector<double> &times) {
  for (std::size_t i = 0; i < times.size(); ++i)
    if (!std::isfinite(times[i]) || (i > 0 && !(times[i] > times[i - 1])))
      fail("InvalidArgument", "times must be finite and strictly increasing");
}

// Exact evolution of the truncated expansion. With store_states the fields
// are reconstructed on the grid (v needs the operator for the gradient).
inline SimulationTrace evolve_analytic(const ModeExpansion &ex,
                                       const std::vector<double> &times,
                                       const WeightedLaplacian *op = nullptr,
                                       bool store_states = false) {
  check_times(times);
  if (store_states && op == nullptr)
    fail("InvalidArgument", "storing states needs the operator");
  const auto &c = ex.coeffs;
  SimulationTrace tr;
  for (double t : times) {
    const double mean = ex.c0 * std::exp(-c.alpha * t);
    double uu = mean * mean, vv = 0.0, grad = 0.0;
    Eigen::VectorXd a(static_cast<Eigen::Index>(ex.modes.size()));
    Eigen::VectorXd b(a.size());
    for (std::size_t i = 0; i < ex.modes.size(); ++i) {
      const auto [ai, bi] = mode_state(ex.modes[i], c, t);
      a[static_cast<Eigen::Index>(i)] = ai;
      b[static_cast<Eigen::Index>(i)] = bi;
      uu += ai * ai;
      vv += bi * bi;
      grad += ex.modes[i].xi * bi * bi;
    }
    tr.times.push_back(t);
    tr.u_norms.push_back(std::sqrt(uu));
    tr.V_norms.push_back(std::sqrt(vv));
    tr.mean_u.push_back(mean);
    tr.energies.push_back(uu + grad);
    if (store_states) {
      FieldState s;
      s.t = t;
      s.u = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(op->size()), mean) +
            ex.eigenfunctions * a;
      s.v = ex.divfree + op->gradient(ex.eigenfunctions * b);
      tr.states.push_back(std::move(s));
    }
  }
  tr.measured_rate = fit_decay_rate(tr.times, tr.u_norms);
  return tr;
}

enum class Scheme { euler, heun };

inline Scheme parse_scheme(const std::string &name) {
  if (name == "euler")
    return Scheme::euler;
  if (name == "heun")
    return Scheme::heun;
  fail("InvalidArgument", "unknown scheme '" + name + "' (euler|heun)");
}

struct IntegratorConfig {
  Scheme scheme = Scheme::heun;
  double tau = 1e-3;
  long steps = 1000;
  long record_every = 1; // trace points every this many steps
  bool store_states = false;

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau))
      fail("InvalidArgument", "tau must be positive");
    if (steps < 1)
      fail("InvalidArgument", "steps must be >= 1");
    if (record_every < 1)
      fail("InvalidArgument", "record_every must be >= 1");
  }
};

// Right-hand side of the discrete system; shares the gradient/divergence
// stencils of the operator so that the discrete adjointness is exact.
inline void lgan_rhs(const WeightedLaplacian &op, const LganCoefficients &c,
                     const Eigen::VectorXd &u, const Eigen::VectorXd &v,
                     Eigen::VectorXd &du, Eigen::VectorXd &dv) {
  du = -c.alpha * u + c.beta * op.divergence(v);
  if (c.gamma != 0.0)
    du -= c.gamma * op.apply(u);
  dv = c.beta * op.gradient(u);
}

// Upper bound on the largest eigenvalue of -Delta_mu (Gershgorin).
inline double xi_upper_bound(const WeightedLaplacian &op) {
  return one_norm(op.matrix());
}

inline SimulationTrace evolve_numeric(const WeightedLaplacian &op,
                                      const Eigen::VectorXd &u0,
                                      const Eigen::VectorXd &v0,
                                      const LganCoefficients &coeffs,
                                      const IntegratorConfig &config) {
  coeffs.validate();
  config.validate();
  detail::check_function(op, u0);
  detail::check_field(op, v0);

  SimulationTrace tr;
  tr.cfl_warning = config.tau * max_modulus(coeffs, xi_upper_bound(op)) > 2.0;
  const PotentialSolver potential(op);
  const Eigen::VectorXd divfree = helmholtz_decompose(op, v0).divfree;

  auto record = [&](const Eigen::VectorXd &u, const Eigen::VectorXd &v,
                    double t) {
    const Eigen::VectorXd pot = potential.solve(v);
    const Eigen::VectorXd grad = v - divfree;
    const double un = op.norm(u);
    tr.times.push_back(t);
    tr.u_norms.push_back(un);
    tr.V_norms.push_back(op.norm(pot));
    tr.mean_u.push_back(op.mean(u));
    tr.energies.push_back(un * un + op.face_inner(grad, grad));
    if (config.store_states)
      tr.states.push_back({u, v, t});
    return std::isfinite(un) && un <= kOverflowGuard &&
           v.cwiseAbs().maxCoeff() <= kOverflowGuard;
  };

  Eigen::VectorXd u = u0, v = v0, du, dv, u1, v1, du1, dv1;
  record(u, v, 0.0);
  for (long step = 1; step <= config.steps; ++step) {
    lgan_rhs(op, coeffs, u, v, du, dv);
    if (config.scheme == Scheme::euler) {
      u += config.tau * du;
      v += config.tau * dv;
    } else {
      u1 = u + config.tau * du;
      v1 = v + config.tau * dv;
      lgan_rhs(op, coeffs, u1, v1, du1, dv1);
      u = 0.5 * (u + u1 + config.tau * du1);
      v = 0.5 * (v + v1 + config.tau * dv1);
    }
    const double t = config.tau * static_cast<double>(step);
    const bool finite = u.allFinite() && v.allFinite() &&
                        u.cwiseAbs().maxCoeff() <= kOverflowGuard &&
                        v.cwiseAbs().maxCoeff() <= kOverflowGuard;
    if (!finite) {
      tr.diverged = true;
      break;
    }
    if (step % config.record_every == 0 || step == config.steps) {
      if (!record(u, v, t)) {
        tr.diverged = true;
        break;
      }
    }
  }
  tr.measured_rate = fit_decay_rate(tr.times, tr.u_norms);
  return tr;
}

// Random field with zero weak divergence, from a stream function psi on the
// cell centres of a 2D grid: face fluxes are differences of psi across the
// face, so the fluxes around every node cancel. psi is the cell-averaged
// density times a smooth random trigonometric sum.
inline Eigen::VectorXd kernel_field(const WeightedLaplacian &op,
                                    std::uint64_t seed, int waves = 6) {
  const auto &g = op.density();
  if (g.dim() == 1)
    fail("TrivialKernel",
         "in one dimension the only zero-flux divergence-free field is zero");
  const std::size_t nx = g.shape()[0], ny = g.shape()[1];
  const double hx = g.spacing()[0], hy = g.spacing()[1];
  const double lx = g.domain()[0].length(), ly = g.domain()[1].length();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  struct Wave {
    double amp, kx, ky, phase;
  };
  std::vector<Wave> ws;
  for (int i = 0; i < waves; ++i)
    ws.push_back({normal(rng), 2.0 * std::numbers::pi * normal(rng) / lx,
                  2.0 * std::numbers::pi * normal(rng) / ly, phase(rng)});

  const Eigen::VectorXd &rho = g.rho();
  auto node = [&](std::size_t i, std::size_t j) {
    return rho[static_cast<Eigen::Index>(i * ny + j)];
  };
  // psi(i, j) at the centre of cell [i, i+1] x [j, j+1].
  Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nx - 1),
                                              static_cast<Eigen::Index>(ny - 1));
  for (std::size_t i = 0; i + 1 < nx; ++i)
    for (std::size_t j = 0; j + 1 < ny; ++j) {
      const double x = g.coordinate(0, i) + 0.5 * hx;
      const double y = g.coordinate(1, j) + 0.5 * hy;
      double s = 0.0;
      for (const auto &w : ws)
        s += w.amp * std::cos(w.kx * x + w.ky * y + w.phase);
      const double avg =
          0.25 * (node(i, j) + node(i + 1, j) + node(i, j + 1) + node(i + 1, j + 1));
      psi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = avg * s;
    }
  auto at = [&](long i, long j) {
    if (i < 0 || j < 0 || i + 1 >= static_cast<long>(nx) ||
        j + 1 >= static_cast<long>(ny))
      return 0.0;
    return psi(i, j);
  };

  Eigen::VectorXd v(static_cast<Eigen::Index>(op.face_count()));
  const auto weights = op.face_weights();
  for (std::size_t f = 0; f < op.face_count(); ++f) {
    const std::size_t lo = op.face_lo(f);
    const long i = static_cast<long>(lo / ny), j = static_cast<long>(lo % ny);
    double flux, h;
    if (op.face_axis(f) == 0) {
      flux = at(i, j) - at(i, j - 1);
      h = hx;
    } else {
      flux = -(at(i, j) - at(i - 1, j));
      h = hy;
    }
    v[static_cast<Eigen::Index>(f)] = flux * h / weights[static_cast<Eigen::Index>(f)];
  }
  return v;
}

} // namespace pdegan
