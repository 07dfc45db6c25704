#pragma once

// Sample-based estimates of the Poincare constant xi_min of a measure known
// only through samples: a k-NN graph Laplacian (Fiedler value), a Rayleigh
// quotient minimizer over a Gaussian radial basis, and a KDE + grid oracle
// for d <= 2.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pdegan/eigensolvers.hpp"
#include "pdegan/error.hpp"
#include "pdegan/laplace.hpp"
#include "pdegan/measure.hpp"
#include "pdegan/seed.hpp"

namespace pdegan {

struct RayleighEstimate {
  double xi_hat = 0.0;
  std::vector<double> loss_curve;
  std::string estimator;
  nlohmann::json config_echo;
  bool converged = true;
  Eigen::VectorXd minimizer; // estimated eigenfunction at the samples
};

enum class GraphNormalization { random_walk, symmetric };

struct GraphEstimatorConfig {
  int k_neighbors = 64;
  double bandwidth = 0.0; // fixed sigma; 0 selects the self-tuning rule
  GraphNormalization normalization = GraphNormalization::random_walk;
  std::uint64_t seed = 0;

  void validate() const {
    if (k_neighbors < 2)
      fail("InvalidArgument", "k_neighbors must be >= 2");
    if (!(bandwidth >= 0.0) || !std::isfinite(bandwidth))
      fail("InvalidArgument", "bandwidth must be > 0 (or 0 for self-tuning)");
  }

  nlohmann::json to_json() const {
    return {{"k_neighbors", k_neighbors},
            {"bandwidth", bandwidth > 0.0 ? nlohmann::json(bandwidth)
                                          : nlohmann::json("self-tuning")},
            {"normalization", normalization == GraphNormalization::random_walk
                                  ? "random-walk"
                                  : "symmetric"},
            {"seed", seed}};
  }
};

inline constexpr double kDisconnectedThreshold = 1e-10;
// Graphs up to this size use the dense eigensolver.
inline constexpr Eigen::Index kDenseGraphLimit = 600;

struct NeighborLists {
  Eigen::MatrixXi index; // N x k, nearest first
  Eigen::MatrixXd dist;  // N x k
};

// Exact k nearest neighbours (excluding the point itself) by blocked
// brute force; ties broken by index so the result is deterministic.
inline NeighborLists nearest_neighbors(const Eigen::MatrixXd &x, int k) {
  const Eigen::Index n = x.rows();
  if (k >= n)
    fail("InvalidArgument", "k_neighbors must be smaller than the sample count");
  NeighborLists out;
  out.index.resize(n, k);
  out.dist.resize(n, k);
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  const Eigen::Index block = 256;
  std::vector<std::pair<double, int>> row(static_cast<std::size_t>(n));
  for (Eigen::Index b0 = 0; b0 < n; b0 += block) {
    const Eigen::Index bn = std::min(block, n - b0);
    const Eigen::MatrixXd gram = x.middleRows(b0, bn) * x.transpose();
    for (Eigen::Index r = 0; r < bn; ++r) {
      const Eigen::Index i = b0 + r;
      for (Eigen::Index j = 0; j < n; ++j) {
        double d2 = sq[i] + sq[j] - 2.0 * gram(r, j);
        if (j == i)
          d2 = std::numeric_limits<double>::infinity();
        row[static_cast<std::size_t>(j)] = {std::max(d2, 0.0), static_cast<int>(j)};
      }
      std::partial_sort(row.begin(), row.begin() + k, row.end());
      for (int c = 0; c < k; ++c) {
        const auto j = row[static_cast<std::size_t>(c)].second;
        // Recompute the kept distances directly for accuracy.
        out.index(i, c) = j;
        out.dist(i, c) = (x.row(i) - x.row(j)).norm();
      }
      // Re-sort on the accurate distances.
      std::vector<int> order(static_cast<std::size_t>(k));
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const double da = out.dist(i, a), db = out.dist(i, b);
        return da < db || (da == db && out.index(i, a) < out.index(i, b));
      });
      Eigen::VectorXi idx = out.index.row(i);
      Eigen::VectorXd dst = out.dist.row(i);
      for (int c = 0; c < k; ++c) {
        out.index(i, c) = idx[order[static_cast<std::size_t>(c)]];
        out.dist(i, c) = dst[order[static_cast<std::size_t>(c)]];
      }
    }
  }
  return out;
}

namespace detail {

// Second-smallest eigenpair of M^{-1/2} L M^{-1/2} with the kernel
// sqrt(m) known.
inline EigenPairs fiedler_pair(const SparseMatrix &l, const Eigen::VectorXd &m,
                               std::uint64_t seed) {
  const Eigen::Index n = l.rows();
  const Eigen::VectorXd s = m.cwiseSqrt().cwiseInverse();
  SparseMatrix a = s.asDiagonal() * l * s.asDiagonal();
  a = 0.5 * (a + SparseMatrix(a.transpose()));
  const Eigen::VectorXd kernel = m.cwiseSqrt().normalized();
  if (n <= kDenseGraphLimit) {
    auto all = dense_smallest(Eigen::MatrixXd(a), std::min<Eigen::Index>(n, 2));
    EigenPairs out;
    out.values = all.values.tail(1);
    out.vectors = all.vectors.rightCols(1);
    out.residuals = all.residuals.tail(1);
    return out;
  }
  LanczosOptions opt;
  opt.seed = seed;
  return lanczos_smallest(a, 1, kernel, opt);
}

} // namespace detail

// Fiedler value of a k-NN Gaussian-kernel graph, calibrated to approximate
// xi_min. Random-walk construction: with self-tuned bandwidths h_i, pair
// bandwidth s_ij^2 = (h_i^2 + h_j^2) / 2, kernel K_ij = exp(-d_ij^2 / 2 s_ij^2)
// and deg_i = sum_j K_ij (no self term), the rates a_ij = K_ij / (deg_i s_ij^2)
// give
//   xi_hat = min_f sum_i m_i sum_j a_ij (f_i - f_j)^2 / Var_m(f).
// The symmetric variant is the classical (D - W) f = lambda D f with kernel
// bandwidth sqrt(h_i h_j), scaled by 2 / mean(h)^2; it targets the operator
// of rho^2 rather than rho and is kept for diagnostics.
struct GraphLaplacian {
  SparseMatrix laplacian; // Q, symmetric positive semidefinite
  Eigen::VectorXd mass;   // M (diagonal)
  Eigen::VectorXd bandwidth;
};

inline GraphLaplacian graph_laplacian(const SampleSet &samples,
                                      const GraphEstimatorConfig &config = {}) {
  samples.validate();
  config.validate();
  const auto n = static_cast<Eigen::Index>(samples.size());
  if (n < config.k_neighbors + 1)
    fail("InvalidArgument", "need at least k_neighbors + 1 samples");
  const int k = config.k_neighbors;
  const auto nb = nearest_neighbors(samples.points, k);

  Eigen::VectorXd h(n);
  const int tune = std::min(k, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(k)))));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (config.bandwidth > 0.0) {
      h[i] = config.bandwidth;
      continue;
    }
    h[i] = nb.dist(i, tune - 1);
    for (int c = tune; h[i] <= 0.0 && c < k; ++c)
      h[i] = nb.dist(i, c);
    if (!(h[i] > 0.0))
      fail("DegenerateSamples", "more than k_neighbors coincident samples");
  }

  // Undirected neighbour sets: the union of both kNN directions, so sparse
  // tail samples also receive edges from the bulk.
  std::vector<std::vector<std::pair<Eigen::Index, double>>> adj(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) {
      const Eigen::Index j = nb.index(i, c);
      adj[static_cast<std::size_t>(i)].push_back({j, nb.dist(i, c)});
      adj[static_cast<std::size_t>(j)].push_back({i, nb.dist(i, c)});
    }
  const bool random_walk = config.normalization == GraphNormalization::random_walk;
  // Per edge: neighbour, kernel weight, squared pair bandwidth.
  struct Edge {
    Eigen::Index j;
    double w;
    double s2;
  };
  std::vector<std::vector<Edge>> edges(static_cast<std::size_t>(n));
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      auto &p = parent[static_cast<std::size_t>(x)];
      p = parent[static_cast<std::size_t>(p)];
      x = p;
    }
    return x;
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    auto &a = adj[static_cast<std::size_t>(i)];
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end(),
                        [](const auto &x, const auto &y) { return x.first == y.first; }),
            a.end());
    auto &e = edges[static_cast<std::size_t>(i)];
    e.reserve(a.size());
    for (const auto &[j, d] : a) {
      const double s2 = random_walk ? 0.5 * (h[i] * h[i] + h[j] * h[j]) : h[i] * h[j];
      const double w = std::exp(-0.5 * d * d / s2);
      e.push_back({j, w, s2});
      if (w > 0.0) {
        const int ri = find(static_cast<int>(i)), rj = find(static_cast<int>(j));
        if (ri != rj)
          parent[static_cast<std::size_t>(ri)] = rj;
      }
    }
  }
  int components = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    components += find(static_cast<int>(i)) == i;
  if (components > 1)
    fail("DisconnectedGraph", "neighbour graph has " + std::to_string(components) +
                                  " connected components");

  const Eigen::VectorXd m = samples.effective_weights();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(4 * n * k));
  Eigen::VectorXd mass;
  if (random_walk) {
    // Edge i -> j carries m_i a_ij with a_ij = K_ij / (deg_i s_ij^2), so
    // sum_j a_ij (f_i - f_j)^2 estimates |grad f(x_i)|^2.
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto &e = edges[static_cast<std::size_t>(i)];
      double deg = 0.0;
      for (const auto &x : e)
        deg += x.w;
      for (const auto &x : e) {
        const double b = m[i] * x.w / (deg * x.s2);
        trip.emplace_back(i, i, b);
        trip.emplace_back(x.j, x.j, b);
        trip.emplace_back(i, x.j, -b);
        trip.emplace_back(x.j, i, -b);
      }
    }
    mass = m;
  } else {
    // (D - W) f = lambda D f.
    const double hbar = h.mean();
    const double scale = 2.0 / (hbar * hbar);
    mass = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (const auto &x : edges[static_cast<std::size_t>(i)]) {
        const double b = m[i] * m[x.j] * x.w;
        mass[i] += b;
        trip.emplace_back(i, i, scale * b);
        trip.emplace_back(i, x.j, -scale * b);
      }
  }
  SparseMatrix l(n, n);
  l.setFromTriplets(trip.begin(), trip.end());

  return {std::move(l), std::move(mass), std::move(h)};
}

inline RayleighEstimate estimate_graph(const SampleSet &samples,
                                       const GraphEstimatorConfig &config = {}) {
  const auto g = graph_laplacian(samples, config);
  const auto &mass = g.mass;
  const auto pair = detail::fiedler_pair(g.laplacian, mass, derive_seed(config.seed, 1));
  RayleighEstimate out;
  out.estimator = "graph";
  out.config_echo = config.to_json();
  out.xi_hat = pair.values[0];
  if (!(out.xi_hat > kDisconnectedThreshold))
    fail("DisconnectedGraph", "second eigenvalue " + std::to_string(out.xi_hat) +
                                  " below the connectivity threshold");
  out.minimizer = pair.vectors.col(0).cwiseQuotient(mass.cwiseSqrt());
  out.minimizer /= std::sqrt(out.minimizer.cwiseProduct(mass).dot(out.minimizer));
  out.loss_curve = {out.xi_hat};
  return out;
}


struct ParametricEstimatorConfig {
  int n_centers = 64;
  double length_scale = 0.0; // 0: median pairwise distance of the centers
  int batch_size = 1024;
  double step_size = 0.0; // 0: 0.5 / largest whitened energy eigenvalue
  int iterations = 2000;
  std::uint64_t seed = 0;
  int kmeans_subsample = 2000;

  void validate() const {
    if (n_centers < 1)
      fail("InvalidArgument", "n_centers must be >= 1");
    if (iterations < 1)
      fail("InvalidArgument", "iterations must be >= 1");
    if (batch_size < 2)
      fail("InvalidArgument", "batch_size must be >= 2");
    if (!(length_scale >= 0.0) || !std::isfinite(length_scale))
      fail("InvalidArgument", "length_scale must be > 0 (or 0 for the default)");
    if (!(step_size >= 0.0) || !std::isfinite(step_size))
      fail("InvalidArgument", "step_size must be > 0 (or 0 for the default)");
    if (kmeans_subsample < 1)
      fail("InvalidArgument", "kmeans_subsample must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"n_centers", n_centers},
            {"length_scale", length_scale > 0.0 ? nlohmann::json(length_scale)
                                                : nlohmann::json("median-distance")},
            {"batch_size", batch_size},
            {"step_size", step_size > 0.0 ? nlohmann::json(step_size)
                                          : nlohmann::json("auto")},
            {"iterations", iterations},
            {"seed", seed},
            {"kmeans_subsample", kmeans_subsample}};
  }
};

// Relative covariance eigenvalue below which a whitened direction is dropped.
inline constexpr double kWhiteningCutoff = 1e-9;
// Relative spread of 10-step loss averages over the final decile above
// which a run is flagged as not converged.
inline constexpr double kOscillationTolerance = 0.10;

namespace detail {

// k-means++ seeding followed by Lloyd iterations on a seeded subsample.
inline Eigen::MatrixXd kmeans_centers(const Eigen::MatrixXd &x, int r,
                                      int subsample, std::uint64_t seed) {
  const Eigen::Index n = x.rows();
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(std::min<Eigen::Index>(n, subsample)));
  std::sort(idx.begin(), idx.end());
  const auto s = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd pts(s, x.cols());
  for (Eigen::Index i = 0; i < s; ++i)
    pts.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
  r = static_cast<int>(std::min<Eigen::Index>(r, s));

  Eigen::MatrixXd c(r, x.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, s - 1);
  c.row(0) = pts.row(first(rng));
  Eigen::VectorXd d2 = (pts.rowwise() - c.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < r; ++j) {
    Eigen::Index pick = 0;
    if (d2.sum() > 0.0) {
      std::discrete_distribution<Eigen::Index> draw(d2.data(), d2.data() + s);
      pick = draw(rng);
    } else {
      pick = first(rng);
    }
    c.row(j) = pts.row(pick);
    d2 = d2.cwiseMin((pts.rowwise() - c.row(j)).rowwise().squaredNorm());
  }

  std::vector<int> label(static_cast<std::size_t>(s), -1);
  for (int it = 0; it < 50; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < s; ++i) {
      Eigen::Index best = 0;
      (c.rowwise() - pts.row(i)).rowwise().squaredNorm().minCoeff(&best);
      if (label[static_cast<std::size_t>(i)] != best) {
        label[static_cast<std::size_t>(i)] = static_cast<int>(best);
        changed = true;
      }
    }
    if (!changed)
      break;
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(r, x.cols());
    Eigen::VectorXd count = Eigen::VectorXd::Zero(r);
    for (Eigen::Index i = 0; i < s; ++i) {
      sum.row(label[static_cast<std::size_t>(i)]) += pts.row(i);
      count[label[static_cast<std::size_t>(i)]] += 1.0;
    }
    for (int j = 0; j < r; ++j)
      if (count[j] > 0.0)
        c.row(j) = sum.row(j) / count[j];
  }
  return c;
}

inline double median_pairwise_distance(const Eigen::MatrixXd &c) {
  std::vector<double> d;
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    for (Eigen::Index j = i + 1; j < c.rows(); ++j)
      d.push_back((c.row(i) - c.row(j)).norm());
  if (d.empty())
    return 0.0;
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

// Gaussian RBF features phi_ij = exp(-|x_i - c_j|^2 / 2 l^2) and the
// products x_i . c_j they are built from.
struct RbfFeatures {
  Eigen::MatrixXd phi;
  Eigen::MatrixXd dots;
  Eigen::VectorXd sq;
};

inline RbfFeatures rbf_features(const Eigen::MatrixXd &x, const Eigen::MatrixXd &c,
                                double ell) {
  RbfFeatures f;
  f.dots = x * c.transpose();
  f.sq = x.rowwise().squaredNorm();
  const Eigen::RowVectorXd csq = c.rowwise().squaredNorm().transpose();
  f.phi.resize(x.rows(), c.rows());
  const double s = 0.5 / (ell * ell);
  for (Eigen::Index j = 0; j < c.rows(); ++j)
    f.phi.col(j) = (-(f.sq.array() - 2.0 * f.dots.col(j).array() + csq[j]).max(0.0) * s).exp();
  return f;
}

} // namespace detail

// Rayleigh quotient minimization over f(x) = sum_j theta_j phi_j(x). The
// features are whitened against their full-data covariance, so with
// theta = W eta the quotient is eta^T A eta / |eta|^2; SGD runs on the batch
// quotient with eta renormalized after every step.
inline RayleighEstimate estimate_parametric(const SampleSet &samples,
                                            const ParametricEstimatorConfig &config = {}) {
  samples.validate();
  config.validate();
  const Eigen::Index n = samples.points.rows();
  if (n < config.batch_size)
    fail("InvalidArgument", "need at least batch_size samples");
  const Eigen::MatrixXd &x = samples.points;
  const Eigen::VectorXd m = samples.effective_weights();

  const Eigen::MatrixXd c = detail::kmeans_centers(x, config.n_centers, config.kmeans_subsample,
                                                   derive_seed(config.seed, 1));
  double ell = config.length_scale;
  if (!(ell > 0.0))
    ell = detail::median_pairwise_distance(c);
  if (!(ell > 0.0)) {
    const Eigen::RowVectorXd mean = m.transpose() * x;
    ell = std::sqrt(((x.rowwise() - mean).array().square().colwise() * m.array()).sum() /
                    static_cast<double>(x.cols()));
  }
  if (!(ell > 0.0))
    fail("DegenerateSamples", "samples have zero spread");

  const auto feat = detail::rbf_features(x, c, ell);
  const Eigen::MatrixXd &phi = feat.phi;
  const Eigen::Index r = phi.cols();

  // Full-data covariance and energy matrices.
  const Eigen::VectorXd phibar = phi.transpose() * m;
  const Eigen::MatrixXd mphi = m.asDiagonal() * phi;
  const Eigen::MatrixXd gram = phi.transpose() * mphi;
  const Eigen::MatrixXd cov = gram - phibar * phibar.transpose();
  // A_jk = E[phi_j phi_k (|x|^2 - x.c_j - x.c_k + c_j.c_k)] / l^4
  const Eigen::MatrixXd cross = (phi.cwiseProduct(feat.dots)).transpose() * mphi;
  const Eigen::MatrixXd cc = c * c.transpose();
  Eigen::MatrixXd energy = phi.transpose() * (mphi.array().colwise() * feat.sq.array()).matrix() -
                           cross - cross.transpose() + gram.cwiseProduct(cc);
  energy /= std::pow(ell, 4);
  energy = 0.5 * (energy + energy.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ce(cov);
  const double top = ce.eigenvalues().maxCoeff();
  if (!(top > 0.0))
    fail("DegenerateSamples", "basis features have zero variance");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < r; ++j)
    if (ce.eigenvalues()[j] > kWhiteningCutoff * top)
      keep.push_back(j);
  const auto rk = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd w(r, rk);
  for (Eigen::Index j = 0; j < rk; ++j) {
    const Eigen::Index col = keep[static_cast<std::size_t>(j)];
    w.col(j) = ce.eigenvectors().col(col) / std::sqrt(ce.eigenvalues()[col]);
  }
  const Eigen::MatrixXd white = w.transpose() * energy * w;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> we(white, Eigen::EigenvaluesOnly);
  const double step = config.step_size > 0.0 ? config.step_size
                                             : 0.5 / we.eigenvalues().maxCoeff();

  std::mt19937_64 init_rng(derive_seed(config.seed, 3));
  std::normal_distribution<double> normal;
  Eigen::VectorXd eta(rk);
  for (Eigen::Index j = 0; j < rk; ++j)
    eta[j] = normal(init_rng);
  eta.normalize();

  std::mt19937_64 batch_rng(derive_seed(config.seed, 2));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const Eigen::Index b = config.batch_size;
  const double inv_l2 = 1.0 / (ell * ell);

  RayleighEstimate out;
  out.estimator = "parametric";
  out.loss_curve.reserve(static_cast<std::size_t>(config.iterations));
  std::vector<Eigen::Index> batch(static_cast<std::size_t>(b));
  for (int it = 0; it < config.iterations; ++it) {
    for (auto &i : batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), batch_rng);
        cursor = 0;
      }
      i = order[cursor++];
    }
    const Eigen::VectorXd theta = w * eta;
    Eigen::VectorXd wb(b), f(b);
    Eigen::MatrixXd pb(b, r), xb(b, x.cols());
    for (Eigen::Index t = 0; t < b; ++t) {
      const Eigen::Index i = batch[static_cast<std::size_t>(t)];
      wb[t] = m[i];
      pb.row(t) = phi.row(i);
      xb.row(t) = x.row(i);
    }
    if (!(wb.sum() > 0.0))
      continue;
    wb /= wb.sum();
    f = pb * theta;
    const Eigen::VectorXd fc = f.array() - wb.dot(f);
    const double var = wb.dot(fc.cwiseProduct(fc));
    // grad f(x_i) = -(f_i x_i - sum_k theta_k phi_ik c_k) / l^2
    const Eigen::MatrixXd g =
        -inv_l2 * (f.asDiagonal() * xb - pb * theta.asDiagonal() * c);
    const double e = wb.dot(g.rowwise().squaredNorm());
    if (!(var > 0.0))
      fail("NumericalFailure", "batch variance vanished");
    const double loss = e / var;
    out.loss_curve.push_back(loss);
    const Eigen::VectorXd xg = xb.cwiseProduct(g).rowwise().sum();
    const Eigen::MatrixXd cg = g * c.transpose();
    const Eigen::VectorXd grad_e =
        -2.0 * inv_l2 *
        (pb.cwiseProduct((-cg).colwise() + xg)).transpose() * wb;
    const Eigen::VectorXd grad_var = 2.0 * pb.transpose() * wb.cwiseProduct(fc);
    const Eigen::VectorXd grad = w.transpose() * (grad_e - loss * grad_var) / var;
    eta -= step * grad;
    eta.normalize();
  }

  out.xi_hat = eta.dot(white * eta);
  const Eigen::VectorXd theta = w * eta;
  Eigen::VectorXd f = phi * theta;
  f.array() -= m.dot(f);
  out.minimizer = f / std::sqrt(m.dot(f.cwiseProduct(f)));

  // Convergence: 10-step averages over the final decile.
  const auto total = out.loss_curve.size();
  const std::size_t decile = std::max<std::size_t>(1, total / 10);
  const std::size_t block = std::min<std::size_t>(10, decile);
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t s0 = total - decile; s0 + block <= total; s0 += block) {
    double avg = 0.0;
    for (std::size_t t = s0; t < s0 + block; ++t)
      avg += out.loss_curve[t];
    avg /= static_cast<double>(block);
    lo = std::min(lo, avg);
    hi = std::max(hi, avg);
  }
  out.converged = total > 0 && hi - lo <= kOscillationTolerance * lo;
  auto echo = config.to_json();
  echo["length_scale_used"] = ell;
  echo["step_size_used"] = step;
  echo["basis_rank"] = rk;
  out.config_echo = echo;
  if (!(out.xi_hat > 0.0) || !std::isfinite(out.xi_hat))
    fail("NumericalFailure", "non-positive Rayleigh quotient");
  return out;
}

// Fraction of samples trimmed from each tail per axis by the default grid
// domain; isolated far-tail samples otherwise become separate KDE bumps.
inline constexpr double kGridTailTrim = 1e-3;

// Per axis [q(p) - 3 bw, q(1 - p) + 3 bw] with p = kGridTailTrim.
inline std::vector<Interval> trimmed_domain(const SampleSet &samples, double bandwidth) {
  std::vector<Interval> dom(samples.dim());
  const auto n = static_cast<Eigen::Index>(samples.size());
  const auto cut = static_cast<Eigen::Index>(std::floor(kGridTailTrim * static_cast<double>(n)));
  for (Eigen::Index a = 0; a < samples.points.cols(); ++a) {
    std::vector<double> v(samples.points.col(a).data(), samples.points.col(a).data() + n);
    std::sort(v.begin(), v.end());
    dom[static_cast<std::size_t>(a)] = {v[static_cast<std::size_t>(cut)] - 3.0 * bandwidth,
                                        v[static_cast<std::size_t>(n - 1 - cut)] + 3.0 * bandwidth};
  }
  return dom;
}

// Grid oracle for d <= 2: Gaussian KDE of the samples on a box grid and the
// smallest nonzero eigenvalue of the weighted Laplacian.
inline RayleighEstimate estimate_grid_reference(const SampleSet &samples,
                                                double bandwidth = 0.0,
                                                std::vector<Interval> domain = {},
                                                std::vector<std::size_t> shape = {}) {
  samples.validate();
  const std::size_t d = samples.dim();
  if (d > 2)
    fail("DimensionTooHigh", "grid reference supports d <= 2, got d = " + std::to_string(d));
  if (!(bandwidth >= 0.0) || !std::isfinite(bandwidth))
    fail("InvalidBandwidth", "bandwidth must be positive");
  if (bandwidth == 0.0)
    bandwidth = silverman_bandwidth(samples);
  if (!(bandwidth > 0.0))
    fail("InvalidBandwidth", "samples have zero spread");
  if (domain.empty())
    domain = trimmed_domain(samples, bandwidth);
  if (shape.empty())
    shape.assign(d, d == 1 ? 801 : 121);
  const auto density = smooth_samples(samples, bandwidth, domain, shape);
  RayleighEstimate out;
  out.estimator = "grid";
  out.xi_hat = poincare_constant(assemble(density));
  out.loss_curve = {out.xi_hat};
  nlohmann::json dom = nlohmann::json::array();
  for (const auto &iv : domain)
    dom.push_back({iv.lo, iv.hi});
  out.config_echo = {{"bandwidth", bandwidth}, {"domain", dom}, {"shape", shape}};
  return out;
}

enum class EstimatorKind { graph, parametric, grid };

inline EstimatorKind parse_estimator_kind(const std::string &name) {
  if (name == "graph")
    return EstimatorKind::graph;
  if (name == "parametric")
    return EstimatorKind::parametric;
  if (name == "grid")
    return EstimatorKind::grid;
  fail("UnknownEstimator", "unknown estimator '" + name + "' (graph|parametric|grid)");
}

inline std::string to_string(EstimatorKind k) {
  switch (k) {
  case EstimatorKind::graph:
    return "graph";
  case EstimatorKind::parametric:
    return "parametric";
  case EstimatorKind::grid:
    return "grid";
  }
  return "graph";
}

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::graph;
  GraphEstimatorConfig graph;
  ParametricEstimatorConfig parametric;
  double grid_bandwidth = 0.0; // 0: Silverman
};

inline RayleighEstimate estimate(const SampleSet &samples, const EstimatorSpec &spec) {
  switch (spec.kind) {
  case EstimatorKind::graph:
    return estimate_graph(samples, spec.graph);
  case EstimatorKind::parametric:
    return estimate_parametric(samples, spec.parametric);
  case EstimatorKind::grid:
    return estimate_grid_reference(samples, spec.grid_bandwidth);
  }
  return estimate_graph(samples, spec.graph);
}

} // namespace pdegan
