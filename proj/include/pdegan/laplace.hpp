#pragma once

// Finite-volume discretization of the weighted Laplace operator
//   -Delta_mu w = -(1/rho) div(rho grad w)
// with zero weighted flux on the box boundary, plus its spectrum.
//
// Unknowns live on grid nodes, fluxes on the faces between neighbouring
// nodes. With the gradient G (faces x nodes) and face weights
// W_f = rho_f * cell * q_f, rho_f = (rho_i + rho_j) / 2, the stiffness matrix
// is K = G^T W G and the mass matrix is M = diag(rho_i * cell * q_i), where
// q halves control volumes cut by the box boundary. The generalized
// problem K w = xi M w is solved in the symmetrized form
// A = M^{-1/2} K M^{-1/2}.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pdegan/eigensolvers.hpp"
#include "pdegan/error.hpp"
#include "pdegan/measure.hpp"

namespace pdegan {

using SparseMatrix = Eigen::SparseMatrix<double>;

// Separates the constant mode from xi_min.
inline constexpr double kZeroModeThreshold = 1e-8;

class WeightedLaplacian {
public:
  explicit WeightedLaplacian(GridDensity density)
      : density_(std::move(density)) {
    const std::size_t n = density_.size();
    const double cell = density_.cell_volume();
    mass_ = density_.mass();
    const Eigen::VectorXd &rho = density_.rho();

    for (std::size_t a = 0; a < density_.dim(); ++a) {
      const std::size_t stride = density_.strides()[a];
      for (std::size_t i = 0; i < n; ++i) {
        if (density_.axis_index(i, a) + 1 == density_.shape()[a])
          continue;
        const std::size_t j = i + stride;
        double cut = 1.0;
        for (std::size_t b = 0; b < density_.dim(); ++b) {
          const auto ib = density_.axis_index(i, b);
          if (b != a && (ib == 0 || ib + 1 == density_.shape()[b]))
            cut *= 0.5;
        }
        face_lo_.push_back(i);
        face_hi_.push_back(j);
        face_axis_.push_back(a);
        face_weight_.push_back(0.5 * (rho[static_cast<Eigen::Index>(i)] +
                                      rho[static_cast<Eigen::Index>(j)]) *
                               cell * cut);
      }
    }
    const auto nf = static_cast<Eigen::Index>(face_lo_.size());
    const auto nn = static_cast<Eigen::Index>(n);

    std::vector<Eigen::Triplet<double>> g;
    g.reserve(2 * face_lo_.size());
    for (Eigen::Index f = 0; f < nf; ++f) {
      const double inv_h =
          1.0 / density_.spacing()[face_axis_[static_cast<std::size_t>(f)]];
      g.emplace_back(f, static_cast<Eigen::Index>(face_hi_[f]), inv_h);
      g.emplace_back(f, static_cast<Eigen::Index>(face_lo_[f]), -inv_h);
    }
    gradient_.resize(nf, nn);
    gradient_.setFromTriplets(g.begin(), g.end());

    // K = G^T W G assembled face by face so that K * 1 = 0 holds exactly.
    std::vector<Eigen::Triplet<double>> k;
    k.reserve(4 * face_lo_.size());
    std::vector<Eigen::Triplet<double>> s;
    s.reserve(4 * face_lo_.size());
    const Eigen::VectorXd inv_sqrt_mass = mass_.cwiseSqrt().cwiseInverse();
    for (std::size_t f = 0; f < face_lo_.size(); ++f) {
      const double h = density_.spacing()[face_axis_[f]];
      const double c = face_weight_[f] / (h * h);
      const auto i = static_cast<Eigen::Index>(face_lo_[f]);
      const auto j = static_cast<Eigen::Index>(face_hi_[f]);
      k.emplace_back(i, i, c);
      k.emplace_back(j, j, c);
      k.emplace_back(i, j, -c);
      k.emplace_back(j, i, -c);
      const double si = inv_sqrt_mass[i], sj = inv_sqrt_mass[j];
      s.emplace_back(i, i, c * si * si);
      s.emplace_back(j, j, c * sj * sj);
      s.emplace_back(i, j, -c * si * sj);
      s.emplace_back(j, i, -c * si * sj);
    }
    stiffness_.resize(nn, nn);
    stiffness_.setFromTriplets(k.begin(), k.end());
    symmetric_.resize(nn, nn);
    symmetric_.setFromTriplets(s.begin(), s.end());
  }

  const GridDensity &density() const { return density_; }
  std::size_t size() const { return density_.size(); }
  std::size_t face_count() const { return face_lo_.size(); }
  std::size_t face_axis(std::size_t f) const { return face_axis_[f]; }
  std::size_t face_lo(std::size_t f) const { return face_lo_[f]; }
  std::size_t face_hi(std::size_t f) const { return face_hi_[f]; }

  // Diagonal mu-weights (sum to 1).
  const Eigen::VectorXd &mass() const { return mass_; }
  Eigen::Map<const Eigen::VectorXd> face_weights() const {
    return {face_weight_.data(), static_cast<Eigen::Index>(face_weight_.size())};
  }
  const SparseMatrix &stiffness() const { return stiffness_; }
  const SparseMatrix &gradient_matrix() const { return gradient_; }
  // M^{-1/2} K M^{-1/2}.
  const SparseMatrix &matrix() const { return symmetric_; }

  // -Delta_mu u in nodal coordinates.
  Eigen::VectorXd apply(const Eigen::VectorXd &u) const {
    return (stiffness_ * u).cwiseQuotient(mass_);
  }

  // Face-staggered gradient: one component per face, along the face axis.
  Eigen::VectorXd gradient(const Eigen::VectorXd &u) const {
    return gradient_ * u;
  }

  // Weak pairing <grad e_i, v>_mu against every nodal hat function; zero
  // for a field that is divergence free in the weak sense.
  Eigen::VectorXd weak_divergence(const Eigen::VectorXd &v) const {
    return gradient_.transpose() * v.cwiseProduct(face_weights());
  }

  // Strong-form (1/rho) div(rho v), adjoint to the gradient:
  // <grad u, v>_mu = -<u, divergence(v)>_mu.
  Eigen::VectorXd divergence(const Eigen::VectorXd &v) const {
    return -weak_divergence(v).cwiseQuotient(mass_);
  }

  double inner(const Eigen::VectorXd &u, const Eigen::VectorXd &w) const {
    return u.cwiseProduct(mass_).dot(w);
  }
  double face_inner(const Eigen::VectorXd &p, const Eigen::VectorXd &q) const {
    return p.cwiseProduct(face_weights()).dot(q);
  }
  double norm(const Eigen::VectorXd &u) const { return std::sqrt(inner(u, u)); }
  double face_norm(const Eigen::VectorXd &p) const {
    return std::sqrt(face_inner(p, p));
  }
  double mean(const Eigen::VectorXd &u) const { return mass_.dot(u); }

  // <grad u, grad w>_mu.
  double dirichlet(const Eigen::VectorXd &u, const Eigen::VectorXd &w) const {
    return u.dot(stiffness_ * w);
  }

private:
  GridDensity density_;
  Eigen::VectorXd mass_;
  std::vector<std::size_t> face_lo_, face_hi_, face_axis_;
  std::vector<double> face_weight_;
  SparseMatrix gradient_;
  SparseMatrix stiffness_;
  SparseMatrix symmetric_;
};

inline WeightedLaplacian assemble(const GridDensity &density) {
  return WeightedLaplacian(density);
}

struct LaplaceSpectrum {
  Eigen::VectorXd xis;           // ascending, xis[0] ~ 0
  Eigen::MatrixXd eigenfunctions; // nodal values, mu-orthonormal columns
  Eigen::VectorXd residuals;     // ||A y - xi y|| in symmetrized coordinates
  int iterations = 0;

  Eigen::Index count() const { return xis.size(); }
};

enum class EigenSolverKind { automatic, dense, lanczos };

namespace detail {

// Deterministic sign: the first mass-weighted entry reaching half the
// largest magnitude is positive (insensitive to ties between mirror nodes).
inline void fix_sign(Eigen::Ref<Eigen::VectorXd> v, const Eigen::VectorXd &sqrt_mass) {
  const Eigen::VectorXd y = v.cwiseProduct(sqrt_mass);
  const double half = 0.5 * y.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (std::abs(y[i]) >= half) {
      if (y[i] < 0.0)
        v = -v;
      return;
    }
}

} // namespace detail

inline LaplaceSpectrum spectrum(const WeightedLaplacian &op, Eigen::Index k,
                                EigenSolverKind kind = EigenSolverKind::automatic,
                                const LanczosOptions &options = {}) {
  const auto n = static_cast<Eigen::Index>(op.size());
  if (k < 1 || k > n)
    fail("InvalidArgument", "spectrum size k must satisfy 1 <= k <= N");
  if (kind == EigenSolverKind::automatic)
    kind = (n <= 400 || 4 * k > n) ? EigenSolverKind::dense
                                   : EigenSolverKind::lanczos;

  const Eigen::VectorXd sqrt_mass = op.mass().cwiseSqrt();
  EigenPairs pairs;
  const Eigen::VectorXd kernel = sqrt_mass / sqrt_mass.norm();
  if (kind == EigenSolverKind::dense) {
    pairs = dense_smallest(op.matrix(), k);
    // Pin the constant mode to its exact representative and keep the other
    // columns orthogonal to it.
    Eigen::Index zero = 0;
    (pairs.vectors.transpose() * kernel).cwiseAbs().maxCoeff(&zero);
    if (std::abs(pairs.values[zero]) <= kZeroModeThreshold) {
      pairs.vectors.col(zero) = kernel;
      for (Eigen::Index c = 0; c < k; ++c) {
        if (c == zero)
          continue;
        Eigen::VectorXd y = pairs.vectors.col(c);
        y -= kernel.dot(y) * kernel;
        pairs.vectors.col(c) = y.normalized();
      }
      const Eigen::VectorXd ak = op.matrix() * kernel;
      pairs.values[zero] = kernel.dot(ak);
      pairs.residuals[zero] = (ak - pairs.values[zero] * kernel).norm();
    }
  } else {
    // The constant mode is known exactly; the iteration runs on its
    // complement.
    EigenPairs rest;
    if (k > 1)
      rest = lanczos_smallest(op.matrix(), static_cast<int>(k - 1), kernel,
                              options);
    pairs.values.resize(k);
    pairs.vectors.resize(n, k);
    pairs.residuals.resize(k);
    const Eigen::VectorXd ak = op.matrix() * kernel;
    pairs.values[0] = kernel.dot(ak);
    pairs.vectors.col(0) = kernel;
    pairs.residuals[0] = (ak - pairs.values[0] * kernel).norm();
    if (k > 1) {
      pairs.values.tail(k - 1) = rest.values;
      pairs.vectors.rightCols(k - 1) = rest.vectors;
      pairs.residuals.tail(k - 1) = rest.residuals;
    }
    pairs.iterations = rest.iterations;
  }

  LaplaceSpectrum out;
  out.xis = pairs.values;
  out.residuals = pairs.residuals;
  out.iterations = pairs.iterations;
  out.eigenfunctions.resize(n, k);
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::VectorXd w = pairs.vectors.col(c).cwiseQuotient(sqrt_mass);
    w /= op.norm(w);
    detail::fix_sign(w, sqrt_mass);
    out.eigenfunctions.col(c) = w;
  }
  return out;
}

// Smallest eigenvalue above the zero-mode threshold.
inline double poincare_constant(const WeightedLaplacian &op,
                                EigenSolverKind kind = EigenSolverKind::automatic) {
  const auto s = spectrum(op, std::min<Eigen::Index>(2, op.size()), kind);
  if (s.xis.size() < 2 || s.xis[1] <= kZeroModeThreshold)
    fail("DegenerateSpectrum",
         "second eigenvalue below the zero-mode threshold; the "
         "discretization is disconnected");
  return s.xis[1];
}

// <grad w, grad w>_mu / Var_mu(w).
inline double rayleigh_quotient(const WeightedLaplacian &op,
                                const Eigen::VectorXd &w) {
  if (static_cast<std::size_t>(w.size()) != op.size())
    fail("InvalidArgument", "grid function size mismatch");
  const Eigen::VectorXd centered =
      w - Eigen::VectorXd::Constant(w.size(), op.mean(w));
  const double var = op.inner(centered, centered);
  const double scale = op.inner(w, w);
  if (!(var > 1e-24 * scale) || var <= 0.0)
    fail("ZeroVariance", "grid function is constant under mu");
  return op.dirichlet(w, w) / var;
}

inline void write_spectrum_csv(std::ostream &os, const LaplaceSpectrum &s) {
  os << "index,xi\n";
  os.precision(17);
  for (Eigen::Index i = 0; i < s.xis.size(); ++i)
    os << i << ',' << s.xis[i] << '\n';
}

inline void write_eigenfunction_csv(std::ostream &os, const GridDensity &g,
                                    const Eigen::VectorXd &w) {
  for (std::size_t a = 0; a < g.dim(); ++a)
    os << "axis" << a << ',';
  os << "w\n";
  os.precision(17);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto x = g.point(i);
    for (std::size_t a = 0; a < g.dim(); ++a)
      os << x[a] << ',';
    os << w[static_cast<Eigen::Index>(i)] << '\n';
  }
}

inline nlohmann::json spectrum_summary(const LaplaceSpectrum &s) {
  nlohmann::json j;
  j["k"] = s.count();
  j["xi_min"] = s.count() > 1 ? nlohmann::json(s.xis[1]) : nlohmann::json();
  j["residuals"] = std::vector<double>(s.residuals.data(),
                                       s.residuals.data() + s.residuals.size());
  return j;
}

} // namespace pdegan
