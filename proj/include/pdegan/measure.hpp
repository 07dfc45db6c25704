#pragma once

// Target probability measures: positive grid densities for the spectral
// machinery and weighted sample sets for the sample-based estimators.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "pdegan/error.hpp"

namespace pdegan {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;

  double length() const { return hi - lo; }
};

inline constexpr std::size_t kMaxGridDim = 2;
inline constexpr double kDefaultFloorRatio = 1e-300;
// Gaussian components must fit inside the box with this many std deviations.
inline constexpr double kCoverageSigmas = 6.0;

// Uniform rectangular grid of point values, row-major (last axis fastest).
class GridDensity {
public:
  GridDensity() = default;

  // Builds a density from raw nonnegative values: floors at
  // floor_ratio * max(values) and normalizes to unit trapezoidal mass.
  static GridDensity from_values(std::vector<Interval> domain,
                                 std::vector<std::size_t> shape,
                                 Eigen::VectorXd values,
                                 double floor_ratio = kDefaultFloorRatio) {
    GridDensity g;
    g.domain_ = std::move(domain);
    g.shape_ = std::move(shape);
    g.floor_ratio_ = floor_ratio;
    g.init_geometry();
    std::size_t expected = 1;
    for (auto n : g.shape_)
      expected *= n;
    if (static_cast<std::size_t>(values.size()) != expected)
      fail("InvalidGrid", "value count does not match grid shape");
    for (Eigen::Index i = 0; i < values.size(); ++i)
      if (!std::isfinite(values[i]) || values[i] < 0.0)
        fail("InvalidGrid", "density values must be finite and nonnegative");
    if (values.maxCoeff() <= 0.0)
      fail("InvalidGrid", "density vanishes everywhere");
    g.rho_ = std::move(values);
    g.log_partition_ = 0.0;
    return g.normalized();
  }

  std::size_t dim() const { return shape_.size(); }
  std::size_t size() const { return rho_.size(); }
  const std::vector<Interval> &domain() const { return domain_; }
  const std::vector<std::size_t> &shape() const { return shape_; }
  const std::vector<double> &spacing() const { return spacing_; }
  const std::vector<std::size_t> &strides() const { return strides_; }
  const Eigen::VectorXd &rho() const { return rho_; }
  double log_partition() const { return log_partition_; }
  double floor_ratio() const { return floor_ratio_; }

  double cell_volume() const {
    double v = 1.0;
    for (double h : spacing_)
      v *= h;
    return v;
  }

  // Trapezoidal factor of a grid point: 1/2 per axis on which it sits on
  // the boundary (boundary nodes own half a control volume).
  double quadrature_factor(std::size_t flat) const {
    double f = 1.0;
    for (std::size_t a = 0; a < dim(); ++a) {
      const auto i = axis_index(flat, a);
      if (i == 0 || i + 1 == shape_[a])
        f *= 0.5;
    }
    return f;
  }

  Eigen::VectorXd quadrature_factors() const {
    Eigen::VectorXd q(static_cast<Eigen::Index>(size()));
    for (std::size_t i = 0; i < size(); ++i)
      q[static_cast<Eigen::Index>(i)] = quadrature_factor(i);
    return q;
  }

  // mu-weights rho(x_i) * prod(h) * trapezoidal factor; they sum to 1.
  Eigen::VectorXd mass() const {
    return rho_.cwiseProduct(quadrature_factors()) * cell_volume();
  }

  double total_mass() const {
    return rho_.dot(quadrature_factors()) * cell_volume();
  }

  double coordinate(std::size_t axis, std::size_t index) const {
    return domain_[axis].lo + static_cast<double>(index) * spacing_[axis];
  }

  std::size_t axis_index(std::size_t flat, std::size_t axis) const {
    return (flat / strides_[axis]) % shape_[axis];
  }

  // Coordinates of the flat grid point.
  std::array<double, kMaxGridDim> point(std::size_t flat) const {
    std::array<double, kMaxGridDim> x{};
    for (std::size_t a = 0; a < dim(); ++a)
      x[a] = coordinate(a, axis_index(flat, a));
    return x;
  }

  // Same geometry, new values (floored and normalized).
  GridDensity with_values(Eigen::VectorXd values) const {
    return from_values(domain_, shape_, std::move(values), floor_ratio_);
  }

  // Idempotent: an already floored and normalized density is returned
  // unchanged, bit for bit.
  GridDensity normalized() const {
    GridDensity g = *this;
    const double floor = floor_ratio_ * rho_.maxCoeff();
    const Eigen::VectorXd q = quadrature_factors();
    const double total = rho_.dot(q) * cell_volume();
    const double tol = 8.0 * std::numeric_limits<double>::epsilon() *
                       static_cast<double>(std::max<std::size_t>(size(), 1));
    if (std::abs(total - 1.0) <= tol && rho_.minCoeff() >= floor * (1 - 1e-9))
      return g;
    g.rho_ = rho_.cwiseMax(floor);
    const double z = g.rho_.dot(q) * cell_volume();
    g.rho_ /= z;
    g.log_partition_ = log_partition_ + std::log(z);
    return g;
  }

private:
  void init_geometry() {
    if (shape_.empty() || shape_.size() > kMaxGridDim)
      fail("DimensionTooHigh", "grid densities support 1 or 2 dimensions");
    if (domain_.size() != shape_.size())
      fail("InvalidGrid", "domain and shape dimensions differ");
    spacing_.resize(dim());
    strides_.assign(dim(), 1);
    for (std::size_t a = 0; a < dim(); ++a) {
      if (shape_[a] < 3)
        fail("InvalidGrid", "each axis needs at least 3 points");
      if (!(domain_[a].hi > domain_[a].lo))
        fail("InvalidGrid", "empty domain interval");
      spacing_[a] = domain_[a].length() / static_cast<double>(shape_[a] - 1);
    }
    for (std::size_t a = dim() - 1; a > 0; --a)
      strides_[a - 1] = strides_[a] * shape_[a];
  }

  std::vector<Interval> domain_;
  std::vector<std::size_t> shape_;
  std::vector<double> spacing_;
  std::vector<std::size_t> strides_;
  Eigen::VectorXd rho_;
  double log_partition_ = 0.0;
  double floor_ratio_ = kDefaultFloorRatio;
};

inline GridDensity normalize(const GridDensity &g) { return g.normalized(); }

struct MixtureComponent {
  double weight = 1.0;
  std::vector<double> mean;
  std::vector<double> var; // diagonal covariance
};

struct MixtureSpec {
  std::vector<MixtureComponent> components;
  double separation = 0.0;

  // Equal-weight mixture of N(0, 1) and N(D, 1).
  static MixtureSpec two_gaussians(double separation) {
    MixtureSpec s;
    s.separation = separation;
    s.components = {{0.5, {0.0}, {1.0}}, {0.5, {separation}, {1.0}}};
    return s;
  }

  std::size_t dim() const {
    return components.empty() ? 0 : components.front().mean.size();
  }

  void validate() const {
    if (components.empty())
      fail("InvalidMixture", "mixture has no components");
    double total = 0.0;
    for (const auto &c : components) {
      if (!(c.weight > 0.0))
        fail("InvalidMixture", "mixture weights must be positive");
      if (c.mean.size() != dim() || c.var.size() != dim())
        fail("InvalidMixture", "component dimensions differ");
      for (double v : c.var)
        if (!(v > 0.0))
          fail("NonPositiveVariance", "component variance must be positive");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12)
      fail("InvalidMixture", "mixture weights must sum to 1");
  }
};

// Weighted point cloud; empty weights mean uniform 1/N.
struct SampleSet {
  Eigen::MatrixXd points; // N x d
  Eigen::VectorXd weights;

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(points.cols()); }
  bool weighted() const { return weights.size() > 0; }

  Eigen::VectorXd effective_weights() const {
    if (weighted())
      return weights;
    return Eigen::VectorXd::Constant(points.rows(),
                                     1.0 / static_cast<double>(points.rows()));
  }

  void validate() const {
    if (points.rows() < 2)
      fail("InvalidSamples", "need at least 2 samples");
    if (points.cols() < 1)
      fail("InvalidSamples", "samples have no coordinates");
    if (!points.allFinite())
      fail("InvalidSamples", "samples contain non-finite entries");
    if (weighted()) {
      if (weights.size() != points.rows())
        fail("InvalidSamples", "weight count differs from sample count");
      if ((weights.array() < 0.0).any() || !weights.allFinite())
        fail("InvalidSamples", "weights must be nonnegative");
      if (std::abs(weights.sum() - 1.0) > 1e-9)
        fail("InvalidSamples", "weights must sum to 1");
    }
  }
};

namespace detail {

inline void check_grid_request(const std::vector<Interval> &domain,
                               const std::vector<std::size_t> &shape,
                               std::size_t d) {
  if (d > kMaxGridDim)
    fail("DimensionTooHigh",
         "grid densities support d <= 2; use the sample-based estimators");
  if (domain.size() != d || shape.size() != d)
    fail("InvalidGrid", "domain/shape dimension does not match the measure");
}

inline void check_coverage(const std::vector<double> &mean,
                           const std::vector<double> &var,
                           const std::vector<Interval> &domain) {
  for (std::size_t a = 0; a < mean.size(); ++a) {
    if (!(var[a] > 0.0))
      fail("NonPositiveVariance", "variance must be positive");
    const double reach = kCoverageSigmas * std::sqrt(var[a]);
    const double slack = 1e-12 * std::max(1.0, reach);
    if (domain[a].lo > mean[a] - reach + slack ||
        domain[a].hi < mean[a] + reach - slack)
      fail("DomainTooNarrow", "domain must cover mean +- 6 sigma on axis " +
                                  std::to_string(a));
  }
}

// Evaluates f(x) at every grid point of an (unnormalized) geometry.
template <typename F>
Eigen::VectorXd tabulate(const std::vector<Interval> &domain,
                         const std::vector<std::size_t> &shape, F &&f) {
  std::size_t n = 1;
  for (auto s : shape)
    n *= s;
  std::vector<double> h(shape.size());
  for (std::size_t a = 0; a < shape.size(); ++a)
    h[a] = domain[a].length() / static_cast<double>(shape[a] - 1);
  Eigen::VectorXd out(static_cast<Eigen::Index>(n));
  std::array<double, kMaxGridDim> x{};
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat;
    for (std::size_t a = shape.size(); a-- > 0;) {
      x[a] = domain[a].lo + static_cast<double>(rem % shape[a]) * h[a];
      rem /= shape[a];
    }
    out[static_cast<Eigen::Index>(flat)] = f(x);
  }
  return out;
}

inline double diag_gaussian_pdf(const std::array<double, kMaxGridDim> &x,
                                const std::vector<double> &mean,
                                const std::vector<double> &var) {
  double expo = 0.0, norm = 1.0;
  for (std::size_t a = 0; a < mean.size(); ++a) {
    const double z = x[a] - mean[a];
    expo += z * z / var[a];
    norm *= 2.0 * std::numbers::pi * var[a];
  }
  return std::exp(-0.5 * expo) / std::sqrt(norm);
}

} // namespace detail

inline GridDensity gaussian_density(const std::vector<double> &mean,
                                    const std::vector<double> &var,
                                    const std::vector<Interval> &domain,
                                    const std::vector<std::size_t> &shape) {
  if (var.size() != mean.size())
    fail("InvalidGrid", "mean and variance dimensions differ");
  detail::check_grid_request(domain, shape, mean.size());
  detail::check_coverage(mean, var, domain);
  return GridDensity::from_values(
      domain, shape, detail::tabulate(domain, shape, [&](const auto &x) {
        return detail::diag_gaussian_pdf(x, mean, var);
      }));
}

inline GridDensity mixture_density(const MixtureSpec &spec,
                                   const std::vector<Interval> &domain,
                                   const std::vector<std::size_t> &shape) {
  spec.validate();
  detail::check_grid_request(domain, shape, spec.dim());
  for (const auto &c : spec.components)
    detail::check_coverage(c.mean, c.var, domain);
  return GridDensity::from_values(
      domain, shape, detail::tabulate(domain, shape, [&](const auto &x) {
        double p = 0.0;
        for (const auto &c : spec.components)
          p += c.weight * detail::diag_gaussian_pdf(x, c.mean, c.var);
        return p;
      }));
}

// Gaussian kernel density estimate on the grid. Kernel contributions beyond
// 10 bandwidths are dropped (relative size below 2e-22).
inline GridDensity smooth_samples(const SampleSet &samples, double bandwidth,
                                  const std::vector<Interval> &domain,
                                  const std::vector<std::size_t> &shape) {
  samples.validate();
  if (!(bandwidth > 0.0))
    fail("InvalidBandwidth", "bandwidth must be positive");
  const std::size_t d = samples.dim();
  detail::check_grid_request(domain, shape, d);

  std::vector<double> h(d);
  std::vector<std::size_t> strides(d, 1);
  std::size_t n = 1;
  for (std::size_t a = 0; a < d; ++a) {
    if (shape[a] < 3)
      fail("InvalidGrid", "each axis needs at least 3 points");
    h[a] = domain[a].length() / static_cast<double>(shape[a] - 1);
    n *= shape[a];
  }
  for (std::size_t a = d - 1; a > 0; --a)
    strides[a - 1] = strides[a] * shape[a];

  const Eigen::VectorXd w = samples.effective_weights();
  const double cutoff = 10.0 * bandwidth;
  const double inv2b2 = 0.5 / (bandwidth * bandwidth);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));

  std::vector<std::vector<double>> kern(d);
  std::vector<std::size_t> first(d);
  for (Eigen::Index s = 0; s < samples.points.rows(); ++s) {
    if (w[s] == 0.0)
      continue;
    bool empty = false;
    for (std::size_t a = 0; a < d; ++a) {
      const double c = samples.points(s, static_cast<Eigen::Index>(a));
      const double lo = std::ceil((c - cutoff - domain[a].lo) / h[a]);
      const double hi = std::floor((c + cutoff - domain[a].lo) / h[a]);
      const double i0 = std::max(0.0, lo);
      const double i1 = std::min(static_cast<double>(shape[a] - 1), hi);
      if (i1 < i0) {
        empty = true;
        break;
      }
      first[a] = static_cast<std::size_t>(i0);
      kern[a].clear();
      for (auto i = first[a]; i <= static_cast<std::size_t>(i1); ++i) {
        const double z = domain[a].lo + static_cast<double>(i) * h[a] - c;
        kern[a].push_back(std::exp(-z * z * inv2b2));
      }
    }
    if (empty)
      continue;
    if (d == 1) {
      for (std::size_t i = 0; i < kern[0].size(); ++i)
        acc[static_cast<Eigen::Index>(first[0] + i)] += w[s] * kern[0][i];
    } else {
      for (std::size_t i = 0; i < kern[0].size(); ++i) {
        const double wi = w[s] * kern[0][i];
        const std::size_t row = (first[0] + i) * strides[0];
        for (std::size_t j = 0; j < kern[1].size(); ++j)
          acc[static_cast<Eigen::Index>(row + first[1] + j)] +=
              wi * kern[1][j];
      }
    }
  }
  if (acc.maxCoeff() <= 0.0)
    fail("InvalidGrid", "no sample mass falls inside the domain");
  return GridDensity::from_values(domain, shape, std::move(acc));
}

// Silverman's rule of thumb, averaged over axes for d > 1.
inline double silverman_bandwidth(const SampleSet &samples) {
  const auto n = static_cast<double>(samples.size());
  const auto d = static_cast<double>(samples.dim());
  double acc = 0.0;
  for (Eigen::Index a = 0; a < samples.points.cols(); ++a) {
    Eigen::VectorXd col = samples.points.col(a);
    const double mean = col.mean();
    const double sd =
        std::sqrt((col.array() - mean).square().sum() / std::max(1.0, n - 1));
    std::vector<double> v(col.data(), col.data() + col.size());
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
      const double pos = p * (n - 1);
      const auto i = static_cast<std::size_t>(pos);
      const double f = pos - static_cast<double>(i);
      return i + 1 < v.size() ? v[i] * (1 - f) + v[i + 1] * f : v[i];
    };
    const double iqr = (q(0.75) - q(0.25)) / 1.34;
    const double spread = iqr > 0.0 ? std::min(sd, iqr) : sd;
    acc += spread;
  }
  const double spread = acc / d;
  if (d == 1.0)
    return 0.9 * spread * std::pow(n, -0.2);
  return spread * std::pow(4.0 / (d + 2.0), 1.0 / (d + 4.0)) *
         std::pow(n, -1.0 / (d + 4.0));
}

// Box covering every sample by `margin` on each axis.
inline std::vector<Interval> bounding_domain(const SampleSet &samples,
                                             double margin) {
  std::vector<Interval> dom(samples.dim());
  for (Eigen::Index a = 0; a < samples.points.cols(); ++a)
    dom[static_cast<std::size_t>(a)] = {
        samples.points.col(a).minCoeff() - margin,
        samples.points.col(a).maxCoeff() + margin};
  return dom;
}

// Draws n points from a diagonal Gaussian mixture.
inline SampleSet sample_mixture(const MixtureSpec &spec, std::size_t n,
                                std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::vector<double> w;
  for (const auto &c : spec.components)
    w.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  std::normal_distribution<double> normal;
  SampleSet s;
  s.points.resize(static_cast<Eigen::Index>(n),
                  static_cast<Eigen::Index>(spec.dim()));
  for (Eigen::Index i = 0; i < s.points.rows(); ++i) {
    const auto &c = spec.components[pick(rng)];
    for (std::size_t a = 0; a < spec.dim(); ++a)
      s.points(i, static_cast<Eigen::Index>(a)) =
          c.mean[a] + std::sqrt(c.var[a]) * normal(rng);
  }
  return s;
}

} // namespace pdegan
