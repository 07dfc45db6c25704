#pragma once

// Symmetric eigensolvers for the smallest part of a positive semidefinite
// spectrum: a dense reference solver and a shift-invert Lanczos iteration
// with full reorthogonalization for sparse operators.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pdegan/error.hpp"

namespace pdegan {

struct EigenPairs {
  Eigen::VectorXd values;  // ascending
  Eigen::MatrixXd vectors; // orthonormal columns
  Eigen::VectorXd residuals;
  int iterations = 0;
};

struct LanczosOptions {
  double tolerance = 1e-10; // relative to the 1-norm of the operator
  int max_iterations = 0;   // 0: 10 * k * sqrt(n)
  double shift = 0.0;       // 0: chosen from the operator norm
  std::uint64_t seed = 0x5eed;
};

inline double one_norm(const Eigen::SparseMatrix<double> &a) {
  double best = 0.0;
  for (int c = 0; c < a.outerSize(); ++c) {
    double s = 0.0;
    for (Eigen::SparseMatrix<double>::InnerIterator it(a, c); it; ++it)
      s += std::abs(it.value());
    best = std::max(best, s);
  }
  return best;
}

// Reference solver: all eigenpairs of a dense symmetric matrix, truncated
// to the k smallest.
inline EigenPairs dense_smallest(const Eigen::MatrixXd &a, Eigen::Index k) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  if (es.info() != Eigen::Success)
    fail("ConvergenceFailure", "dense symmetric eigensolver failed");
  EigenPairs out;
  k = std::min(k, a.rows());
  out.values = es.eigenvalues().head(k);
  out.vectors = es.eigenvectors().leftCols(k);
  out.residuals.resize(k);
  for (Eigen::Index i = 0; i < k; ++i)
    out.residuals[i] =
        (a * out.vectors.col(i) - out.values[i] * out.vectors.col(i)).norm();
  return out;
}

inline bool is_tridiagonal(const Eigen::SparseMatrix<double> &a) {
  for (int c = 0; c < a.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(a, c); it; ++it)
      if (std::abs(it.row() - it.col()) > 1 && it.value() != 0.0)
        return false;
  return true;
}

// Reference solver for sparse input; tridiagonal matrices (1D grids) skip the
// Householder reduction and go straight to the QL iteration.
inline EigenPairs dense_smallest(const Eigen::SparseMatrix<double> &a,
                                 Eigen::Index k) {
  if (!is_tridiagonal(a))
    return dense_smallest(Eigen::MatrixXd(a), k);
  const Eigen::Index n = a.rows();
  Eigen::VectorXd diag(n), off(std::max<Eigen::Index>(n - 1, 0));
  for (Eigen::Index i = 0; i < n; ++i)
    diag[i] = a.coeff(i, i);
  for (Eigen::Index i = 0; i + 1 < n; ++i)
    off[i] = a.coeff(i + 1, i);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, off, Eigen::ComputeEigenvectors);
  if (es.info() != Eigen::Success)
    fail("ConvergenceFailure", "tridiagonal QL iteration failed");
  EigenPairs out;
  k = std::min(k, n);
  out.values = es.eigenvalues().head(k);
  out.vectors = es.eigenvectors().leftCols(k);
  out.residuals.resize(k);
  for (Eigen::Index i = 0; i < k; ++i)
    out.residuals[i] =
        (a * out.vectors.col(i) - out.values[i] * out.vectors.col(i)).norm();
  return out;
}

// Eigenvalues only of a symmetric tridiagonal matrix (QL iteration).
inline Eigen::VectorXd tridiagonal_eigenvalues(const Eigen::VectorXd &diag,
                                               const Eigen::VectorXd &offdiag) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, offdiag, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    fail("ConvergenceFailure", "tridiagonal QL iteration failed");
  return es.eigenvalues();
}

namespace detail {

// Projects v onto the orthogonal complement of the given basis (twice, which
// is enough to hold orthogonality at working precision).
inline void orthogonalize(Eigen::VectorXd &v,
                          const std::vector<Eigen::VectorXd> &basis) {
  for (int pass = 0; pass < 2; ++pass)
    for (const auto &q : basis)
      v -= q.dot(v) * q;
}

inline Eigen::VectorXd random_start(Eigen::Index n,
                                    const std::vector<Eigen::VectorXd> &locked,
                                    std::mt19937_64 &rng) {
  std::normal_distribution<double> normal;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i)
      v[i] = normal(rng);
    orthogonalize(v, locked);
    const double nv = v.norm();
    if (nv > 1e-8)
      return v / nv;
  }
  return Eigen::VectorXd();
}

struct LanczosRun {
  std::vector<double> values;
  std::vector<Eigen::VectorXd> vectors;
  std::vector<double> residuals;
  int iterations = 0;
  bool converged = false;
  double worst_residual = 0.0;
};

// One Lanczos pass on (A + shift I)^{-1} restricted to the complement of
// `locked`, returning up to `want` converged smallest eigenpairs of A.
template <typename Solver>
LanczosRun lanczos_pass(const Eigen::SparseMatrix<double> &a,
                        const Solver &solver,
                        const std::vector<Eigen::VectorXd> &locked, int want,
                        double abs_tol, int max_iter, std::mt19937_64 &rng) {
  const Eigen::Index n = a.rows();
  LanczosRun run;
  const int room = static_cast<int>(n) - static_cast<int>(locked.size());
  want = std::min(want, room);
  if (want <= 0) {
    run.converged = true;
    return run;
  }
  max_iter = std::min(max_iter, room);

  std::vector<Eigen::VectorXd> q;
  std::vector<double> alpha, beta;
  Eigen::VectorXd v = random_start(n, locked, rng);
  if (v.size() == 0) {
    run.converged = true;
    return run;
  }
  q.push_back(v);

  int next_check = std::min(max_iter, std::max(want + 2, 8));
  for (int j = 0; j < max_iter; ++j) {
    Eigen::VectorXd w = solver.solve(q[static_cast<std::size_t>(j)]);
    if (j > 0)
      w -= beta.back() * q[static_cast<std::size_t>(j - 1)];
    const double aj = q[static_cast<std::size_t>(j)].dot(w);
    alpha.push_back(aj);
    w -= aj * q[static_cast<std::size_t>(j)];
    orthogonalize(w, locked);
    orthogonalize(w, q);
    double bj = w.norm();
    const int m = j + 1;
    run.iterations = m;

    const bool last = (m == max_iter);
    const bool breakdown = bj <= 1e-14 * std::max(1.0, std::abs(aj));
    if (m >= next_check || last || breakdown) {
      next_check = m + std::max(4, m / 4);
      Eigen::VectorXd d = Eigen::Map<Eigen::VectorXd>(alpha.data(), m);
      Eigen::VectorXd e =
          m > 1 ? Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(beta.data(), m - 1))
                : Eigen::VectorXd();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
      es.computeFromTridiagonal(d, e, Eigen::ComputeEigenvectors);
      const int take = std::min(want, m);
      // Largest Ritz values of the inverse are the smallest of A.
      bool estimates_ok = take == want;
      for (int i = 0; i < take && estimates_ok; ++i) {
        const Eigen::Index col = m - 1 - i;
        const double theta = es.eigenvalues()[col];
        const double est = std::abs(bj * es.eigenvectors()(m - 1, col));
        if (est > 1e-12 * std::abs(theta) && !breakdown)
          estimates_ok = false;
      }
      if (estimates_ok || last || breakdown) {
        Eigen::MatrixXd basis(n, m);
        for (int c = 0; c < m; ++c)
          basis.col(c) = q[static_cast<std::size_t>(c)];
        run.values.clear();
        run.vectors.clear();
        run.residuals.clear();
        run.worst_residual = 0.0;
        for (int i = 0; i < take; ++i) {
          const Eigen::Index col = m - 1 - i;
          Eigen::VectorXd x = basis * es.eigenvectors().col(col);
          x.normalize();
          const Eigen::VectorXd ax = a * x;
          const double xi = x.dot(ax);
          const double res = (ax - xi * x).norm();
          run.values.push_back(xi);
          run.vectors.push_back(std::move(x));
          run.residuals.push_back(res);
          run.worst_residual = std::max(run.worst_residual, res);
        }
        if (take == want && run.worst_residual <= abs_tol) {
          run.converged = true;
          return run;
        }
        if (last)
          return run;
      }
    }
    if (breakdown) {
      // Invariant subspace exhausted: continue from a fresh direction.
      std::vector<Eigen::VectorXd> all = locked;
      all.insert(all.end(), q.begin(), q.end());
      Eigen::VectorXd fresh = random_start(n, all, rng);
      if (fresh.size() == 0)
        return run;
      beta.push_back(0.0);
      q.push_back(std::move(fresh));
    } else {
      beta.push_back(bj);
      q.push_back(w / bj);
    }
  }
  return run;
}

} // namespace detail

// k smallest eigenpairs of the symmetric positive semidefinite sparse matrix
// `a`, excluding the span of the orthonormal columns of `deflate` (known
// kernel vectors). Repeated eigenvalues are recovered by rerunning the
// iteration against the locked eigenvectors until no new smaller eigenvalue
// appears.
inline EigenPairs lanczos_smallest(const Eigen::SparseMatrix<double> &a,
                                   int k, const Eigen::MatrixXd &deflate,
                                   const LanczosOptions &opt = {}) {
  const Eigen::Index n = a.rows();
  if (k < 1 || k > n)
    fail("InvalidArgument", "requested eigenpair count out of range");
  const double anorm = std::max(one_norm(a), 1e-300);
  const double abs_tol = opt.tolerance * anorm;
  const double shift = opt.shift > 0.0 ? opt.shift : 1e-6 * anorm;
  const int max_iter =
      opt.max_iterations > 0
          ? opt.max_iterations
          : static_cast<int>(10.0 * k * std::sqrt(static_cast<double>(n))) +
                20;

  Eigen::SparseMatrix<double> shifted = a;
  Eigen::SparseMatrix<double> eye(n, n);
  eye.setIdentity();
  shifted += shift * eye;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(shifted);
  if (solver.info() != Eigen::Success)
    fail("ConvergenceFailure", "factorization of the shifted operator failed");

  std::vector<Eigen::VectorXd> locked;
  for (Eigen::Index c = 0; c < deflate.cols(); ++c)
    locked.push_back(deflate.col(c));

  std::mt19937_64 rng(opt.seed);
  std::vector<double> vals;
  std::vector<Eigen::VectorXd> vecs;
  std::vector<double> res;
  int total_iter = 0;

  const double cluster_tol = 1e-8 * std::max(1.0, anorm);
  for (int round = 0; round < k + 1; ++round) {
    auto run = detail::lanczos_pass(a, solver, locked, k, abs_tol,
                                    max_iter, rng);
    total_iter += run.iterations;
    if (!run.converged)
      fail("ConvergenceFailure",
           "Lanczos stalled after " + std::to_string(total_iter) +
               " iterations, residual " + std::to_string(run.worst_residual));
    const double current_max =
        static_cast<int>(vals.size()) >= k
            ? *std::max_element(vals.begin(), vals.end())
            : std::numeric_limits<double>::infinity();
    bool improved = false;
    for (std::size_t i = 0; i < run.values.size(); ++i) {
      if (static_cast<int>(vals.size()) < k ||
          run.values[i] < current_max - cluster_tol * 1e-3) {
        improved = true;
      }
      vals.push_back(run.values[i]);
      vecs.push_back(run.vectors[i]);
      res.push_back(run.residuals[i]);
      locked.push_back(run.vectors[i]);
    }
    if (!improved || run.values.empty())
      break;
  }

  std::vector<std::size_t> order(vals.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return vals[x] < vals[y]; });
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(k),
                                          order.size());
  EigenPairs out;
  out.values.resize(static_cast<Eigen::Index>(take));
  out.vectors.resize(n, static_cast<Eigen::Index>(take));
  out.residuals.resize(static_cast<Eigen::Index>(take));
  for (std::size_t i = 0; i < take; ++i) {
    out.values[static_cast<Eigen::Index>(i)] = vals[order[i]];
    out.vectors.col(static_cast<Eigen::Index>(i)) = vecs[order[i]];
    out.residuals[static_cast<Eigen::Index>(i)] = res[order[i]];
  }
  out.iterations = total_iter;
  return out;
}

} // namespace pdegan
