#pragma once

// Linearized GAN (lGAN) coefficients and the map from the spectrum of the
// weighted Laplacian to the eigenvalues of the saddle-point dynamics
//   lambda^2 + (alpha + gamma xi) lambda + beta^2 xi = 0.

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pdegan/error.hpp"

namespace pdegan {

using Complex = std::complex<double>;

// Loss functions enter only through their derivatives at zero.
struct LossSpec {
  double phi1_d2 = 0.0; // phi_1''(0)
  double phi2_d2 = 0.0; // phi_2''(0)
  double phi2_d1 = 1.0; // phi_2'(0)
};

struct LganCoefficients {
  double alpha = 0.0;
  double beta = 1.0;
  double gamma = 0.0; // gradient penalty weight

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha))
      fail("InvalidCoefficients", "alpha must be finite and >= 0");
    if (!(gamma >= 0.0) || !std::isfinite(gamma))
      fail("InvalidCoefficients", "gamma must be finite and >= 0");
    if (beta == 0.0 || !std::isfinite(beta))
      fail("InvalidCoefficients", "beta must be finite and nonzero");
  }
};

inline LganCoefficients coefficients_from_losses(const LossSpec &spec,
                                                 double gamma = 0.0) {
  if (!std::isfinite(spec.phi1_d2) || !std::isfinite(spec.phi2_d2) ||
      !(spec.phi1_d2 + spec.phi2_d2 >= 0.0))
    fail("InvalidLoss", "phi_1''(0) + phi_2''(0) must be >= 0");
  if (spec.phi2_d1 == 0.0 || !std::isfinite(spec.phi2_d1))
    fail("InvalidLoss", "phi_2'(0) must be nonzero");
  if (!(gamma >= 0.0) || !std::isfinite(gamma))
    fail("InvalidLoss", "gradient penalty gamma must be >= 0");
  return {0.5 * (spec.phi1_d2 + spec.phi2_d2), spec.phi2_d1, gamma};
}

// Relative discriminant threshold below which a pair counts as a double root.
inline constexpr double kDoubleRootTolerance = 1e-12;

struct ModeEigenvalues {
  double xi = 0.0;
  Complex plus;  // larger real part
  Complex minus;
  bool oscillatory = false;
  bool stable = false;
  bool double_root = false;
};

struct LganEigenvalues {
  std::vector<ModeEigenvalues> modes;

  std::size_t size() const { return modes.size(); }
  const ModeEigenvalues &operator[](std::size_t i) const { return modes[i]; }
};

// Damping b = alpha + gamma xi and stiffness c = beta^2 xi of one mode.
inline std::pair<double, double> mode_polynomial(const LganCoefficients &c,
                                                 double xi) {
  return {c.alpha + c.gamma * xi, c.beta * c.beta * xi};
}

// Roots of lambda^2 + b lambda + c with b, c >= 0; the real branch avoids
// cancellation by pairing the larger-magnitude root with c / root.
inline ModeEigenvalues mode_eigenvalues(const LganCoefficients &coeffs,
                                        double xi) {
  const auto [b, c] = mode_polynomial(coeffs, xi);
  ModeEigenvalues m;
  m.xi = xi;
  const double disc = b * b - 4.0 * c;
  const double scale = std::max(b * b, 4.0 * c);
  if (std::abs(disc) <= kDoubleRootTolerance * scale) {
    m.plus = m.minus = Complex(-0.5 * b, 0.0);
    m.double_root = true;
  } else if (disc > 0.0) {
    const double big = -0.5 * (b + std::sqrt(disc));
    m.minus = Complex(big, 0.0);
    m.plus = Complex(big != 0.0 ? c / big : 0.0, 0.0);
  } else {
    const double im = 0.5 * std::sqrt(-disc);
    m.plus = Complex(-0.5 * b, im);
    m.minus = Complex(-0.5 * b, -im);
    m.oscillatory = true;
  }
  m.stable = m.plus.real() < 0.0;
  return m;
}

inline LganEigenvalues lgan_eigenvalues(const LganCoefficients &coeffs,
                                        const std::vector<double> &xis) {
  coeffs.validate();
  LganEigenvalues out;
  out.modes.reserve(xis.size());
  for (double xi : xis) {
    if (!(xi > 0.0) || !std::isfinite(xi))
      fail("InvalidArgument", "eigenvalues xi must be positive and finite");
    out.modes.push_back(mode_eigenvalues(coeffs, xi));
  }
  return out;
}

// |lambda^2 + b lambda + c| relative to the size of its terms.
inline double quadratic_residual(const LganCoefficients &coeffs, double xi,
                                 Complex lambda) {
  const auto [b, c] = mode_polynomial(coeffs, xi);
  const double scale = std::norm(lambda) + b * std::abs(lambda) + c;
  const double r = std::abs(lambda * lambda + b * lambda + c);
  return scale > 0.0 ? r / scale : r;
}

// Feasible alpha for the optimal rate: the bound on alpha stated alongside
// the optimality conditions, intersected with the one implied by
// gamma >= |beta| / sqrt(xi_min).
inline double max_optimal_alpha(double beta, double xi_min) {
  const double s = std::sqrt(xi_min);
  return std::min(std::abs(beta) / s, std::abs(beta) * s);
}

// (alpha, gamma) placing xi_min at the double root:
// alpha + gamma xi_min = 2 |beta| sqrt(xi_min).
inline LganCoefficients optimal_parameters(double beta, double xi_min,
                                           std::optional<double> alpha = {}) {
  if (beta == 0.0 || !std::isfinite(beta))
    fail("InvalidArgument", "beta must be finite and nonzero");
  if (!(xi_min > 0.0) || !std::isfinite(xi_min))
    fail("InvalidArgument", "xi_min must be positive");
  const double a = alpha.value_or(0.0);
  const double hi = max_optimal_alpha(beta, xi_min);
  if (!(a >= 0.0) || a > hi * (1.0 + 1e-12))
    fail("InfeasibleAlpha", "alpha must lie in [0, " + std::to_string(hi) + "]");
  const double s = std::sqrt(xi_min);
  const double gamma = (2.0 * std::abs(beta) * s - a) / xi_min;
  return {a, beta, gamma};
}

// eta = Re lambda^+(xi_min): the rate of the slowest mode.
inline double max_real_part(const LganCoefficients &coeffs, double xi_min) {
  coeffs.validate();
  if (!(xi_min > 0.0))
    fail("InvalidArgument", "xi_min must be positive");
  return mode_eigenvalues(coeffs, xi_min).plus.real();
}

// sup of Re lambda^+ over xi in [xi_lo, xi_hi]: best sample of a log grid,
// refined by golden section between its neighbours.
inline double spectral_abscissa(const LganCoefficients &coeffs, double xi_lo,
                                double xi_hi) {
  coeffs.validate();
  if (!(xi_lo > 0.0) || !(xi_hi >= xi_lo))
    fail("InvalidArgument", "need 0 < xi_lo <= xi_hi");
  auto f = [&](double t) {
    return mode_eigenvalues(coeffs, std::exp(t)).plus.real();
  };
  const double lo = std::log(xi_lo), hi = std::log(xi_hi);
  double best = std::max(f(lo), f(hi));
  const int samples = 512;
  int arg = 0;
  for (int i = 0; i <= samples; ++i) {
    const double v = f(lo + (hi - lo) * i / samples);
    if (v >= best) {
      best = v;
      arg = i;
    }
  }
  double a = lo + (hi - lo) * std::max(arg - 1, 0) / samples;
  double b = lo + (hi - lo) * std::min(arg + 1, samples) / samples;
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int it = 0; it < 100 && b - a > 1e-14 * std::max(1.0, std::abs(a)); ++it) {
    const double x1 = b - g * (b - a), x2 = a + g * (b - a);
    if (f(x1) < f(x2))
      a = x1;
    else
      b = x2;
  }
  return std::max(best, f(0.5 * (a + b)));
}

// Modulus of the forward-Euler amplification factor 1 + tau lambda, maximized
// over the two roots of the mode.
inline double euler_mode_modulus(const LganCoefficients &coeffs, double xi,
                                 double tau) {
  if (!(tau >= 0.0))
    fail("InvalidArgument", "tau must be >= 0");
  if (tau == 0.0)
    return 1.0;
  const auto m = mode_eigenvalues(coeffs, xi);
  return std::max(std::abs(1.0 + tau * m.plus), std::abs(1.0 + tau * m.minus));
}

// Largest |lambda| over modes with xi <= xi_max; used for step-size warnings.
inline double max_modulus(const LganCoefficients &coeffs, double xi_max) {
  const auto m = mode_eigenvalues(coeffs, xi_max);
  return std::max(std::abs(m.plus), std::abs(m.minus));
}

} // namespace pdegan
