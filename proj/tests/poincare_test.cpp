#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pdegan/poincare.hpp"

using namespace pdegan;

namespace {

void expect_error(const auto &f, const std::string &code) {
  try {
    f();
    FAIL() << "expected " << code;
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), code);
  }
}

SampleSet gaussian_samples(std::size_t n, std::uint64_t seed) {
  return sample_mixture(MixtureSpec::two_gaussians(0.0), n, seed);
}

SampleSet scaled(const SampleSet &s, double f) {
  SampleSet out = s;
  out.points *= f;
  return out;
}

SampleSet permuted(const SampleSet &s, std::uint64_t seed) {
  std::vector<Eigen::Index> p(s.size());
  std::iota(p.begin(), p.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  SampleSet out;
  out.points.resize(s.points.rows(), s.points.cols());
  for (std::size_t i = 0; i < p.size(); ++i)
    out.points.row(static_cast<Eigen::Index>(i)) = s.points.row(p[i]);
  return out;
}

double correlation(const Eigen::VectorXd &a, const Eigen::VectorXd &b) {
  const Eigen::VectorXd ac = a.array() - a.mean();
  const Eigen::VectorXd bc = b.array() - b.mean();
  return ac.dot(bc) / (ac.norm() * bc.norm());
}

// Rayleigh quotient of exp(-(x - c)^2 / 2 l^2) under N(0, 1), in closed form:
// with y = x - c and b > 0, E[e^{-b y^2 / 2}] = e^{-b c^2 / 2(1+b)} / sqrt(1+b)
// and E[y^2 e^{-b y^2 / 2}] adds the factor 1/(1+b) + c^2/(1+b)^2.
double single_bump_quotient(double c, double l) {
  const double a = 1.0 / (l * l);
  auto moment0 = [&](double b) {
    return std::exp(-b * c * c / (2.0 * (1.0 + b))) / std::sqrt(1.0 + b);
  };
  auto moment2 = [&](double b) {
    return moment0(b) * (1.0 / (1.0 + b) + c * c / ((1.0 + b) * (1.0 + b)));
  };
  const double var = moment0(2.0 * a) - moment0(a) * moment0(a);
  return a * a * moment2(2.0 * a) / var;
}

} // namespace

TEST(NearestNeighbors, MatchSortedDistances) {
  const auto s = sample_mixture(
      {{{0.5, {0.0, 0.0}, {1.0, 1.0}}, {0.5, {2.0, 1.0}, {0.5, 2.0}}}}, 300, 3);
  const int k = 7;
  const auto nb = nearest_neighbors(s.points, k);
  for (Eigen::Index i = 0; i < s.points.rows(); ++i) {
    std::vector<std::pair<double, Eigen::Index>> all;
    for (Eigen::Index j = 0; j < s.points.rows(); ++j)
      if (j != i)
        all.push_back({(s.points.row(i) - s.points.row(j)).norm(), j});
    std::sort(all.begin(), all.end());
    for (int c = 0; c < k; ++c) {
      EXPECT_EQ(nb.index(i, c), all[static_cast<std::size_t>(c)].second);
      EXPECT_DOUBLE_EQ(nb.dist(i, c), all[static_cast<std::size_t>(c)].first);
    }
  }
}

TEST(NearestNeighbors, RejectsTooManyNeighbors) {
  const auto s = gaussian_samples(10, 1);
  expect_error([&] { nearest_neighbors(s.points, 10); }, "InvalidArgument");
}

TEST(GraphEstimator, StandardGaussianNearOne) {
  const auto s = gaussian_samples(10000, 21);
  const auto e = estimate_graph(s);
  EXPECT_GE(e.xi_hat, 0.8);
  EXPECT_LE(e.xi_hat, 1.2);
  EXPECT_EQ(e.estimator, "graph");
  EXPECT_EQ(e.config_echo["k_neighbors"], 64);
  EXPECT_GE(std::abs(correlation(e.minimizer, s.points.col(0))), 0.95);
}

TEST(GraphEstimator, SeparatedClustersAreDisconnected) {
  const auto s = sample_mixture(MixtureSpec::two_gaussians(60.0), 2000, 4);
  GraphEstimatorConfig c;
  c.k_neighbors = 8;
  try {
    estimate_graph(s, c);
    FAIL() << "expected DisconnectedGraph";
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), "DisconnectedGraph");
    EXPECT_NE(std::string(e.what()).find("2 connected components"), std::string::npos)
        << e.what();
  }
}

TEST(GraphEstimator, DecreasesWithSeparation) {
  double prev = std::numeric_limits<double>::infinity();
  for (double d : {0.0, 1.0, 2.0, 3.0, 4.0, 5.0}) {
    const auto xi = estimate_graph(sample_mixture(MixtureSpec::two_gaussians(d), 3000, 11)).xi_hat;
    EXPECT_LT(xi, prev) << "D = " << d;
    prev = xi;
  }
}

TEST(GraphEstimator, ScalesInverseSquare) {
  const auto s = gaussian_samples(2000, 5);
  const double base = estimate_graph(s).xi_hat;
  for (double f : {0.5, 3.0})
    EXPECT_NEAR(estimate_graph(scaled(s, f)).xi_hat * f * f / base, 1.0, 1e-9);
}

TEST(GraphEstimator, PermutationInvariant) {
  const auto s = sample_mixture(MixtureSpec::two_gaussians(2.0), 2000, 6);
  const double a = estimate_graph(s).xi_hat;
  const double b = estimate_graph(permuted(s, 99)).xi_hat;
  EXPECT_NEAR(a, b, 1e-9 * a);
}

TEST(GraphEstimator, SymmetricVariantIsPositive) {
  GraphEstimatorConfig c;
  c.normalization = GraphNormalization::symmetric;
  const auto e = estimate_graph(gaussian_samples(1500, 8), c);
  EXPECT_GT(e.xi_hat, 0.0);
  EXPECT_EQ(e.config_echo["normalization"], "symmetric");
}

TEST(GraphEstimator, FixedBandwidthOnUniform) {
  // Uniform on [0, 1]: the first Neumann eigenvalue is pi^2.
  SampleSet s;
  s.points.resize(3000, 1);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Eigen::Index i = 0; i < s.points.rows(); ++i)
    s.points(i, 0) = u(rng);
  GraphEstimatorConfig c;
  c.bandwidth = 0.01;
  c.k_neighbors = 200;
  const auto e = estimate_graph(s, c);
  EXPECT_NEAR(e.xi_hat / (M_PI * M_PI), 1.0, 0.15);
  EXPECT_EQ(e.config_echo["bandwidth"], 0.01);
}

TEST(GraphEstimator, RejectsBadInput) {
  const auto s = gaussian_samples(50, 1);
  GraphEstimatorConfig c;
  expect_error([&] { estimate_graph(s, c); }, "InvalidArgument");
  c.k_neighbors = 1;
  expect_error([&] { estimate_graph(s, c); }, "InvalidArgument");
  c.k_neighbors = 8;
  c.bandwidth = -1.0;
  expect_error([&] { estimate_graph(s, c); }, "InvalidArgument");

  SampleSet dup;
  dup.points = Eigen::MatrixXd::Zero(40, 1);
  dup.points.bottomRows(5).setOnes();
  GraphEstimatorConfig small;
  small.k_neighbors = 8;
  expect_error([&] { estimate_graph(dup, small); }, "DegenerateSamples");
}

TEST(ParametricEstimator, StandardGaussianNearOne) {
  const auto s = gaussian_samples(10000, 21);
  const auto e = estimate_parametric(s);
  EXPECT_GE(e.xi_hat, 0.8);
  EXPECT_LE(e.xi_hat, 1.2);
  EXPECT_TRUE(e.converged);
  EXPECT_EQ(e.loss_curve.size(), 2000u);
  EXPECT_GE(std::abs(correlation(e.minimizer, s.points.col(0))), 0.95);
}

TEST(ParametricEstimator, SingleBumpMatchesClosedForm) {
  const auto s = gaussian_samples(20000, 22);
  ParametricEstimatorConfig c;
  c.n_centers = 1;
  c.iterations = 50;
  const auto e = estimate_parametric(s, c);
  const double l = e.config_echo["length_scale_used"];
  EXPECT_NEAR(l, 1.0, 0.03);
  EXPECT_NEAR(e.xi_hat / single_bump_quotient(0.0, l), 1.0, 0.02);
  // Any trial function bounds xi_min from above.
  EXPECT_GT(e.xi_hat, estimate_graph(gaussian_samples(10000, 22)).xi_hat);
}

TEST(ParametricEstimator, MixtureAtThree) {
  const auto e = estimate_parametric(sample_mixture(MixtureSpec::two_gaussians(3.0), 10000, 23));
  EXPECT_NEAR(e.xi_hat, 0.25, 0.3 * 0.25);
}

TEST(ParametricEstimator, BoundedBelowByGridOracle) {
  for (double d : {0.0, 2.0, 4.0}) {
    const auto s = sample_mixture(MixtureSpec::two_gaussians(d), 10000, 24);
    const double grid = estimate_grid_reference(s).xi_hat;
    EXPECT_GE(estimate_parametric(s).xi_hat, 0.95 * grid) << "D = " << d;
  }
}

TEST(ParametricEstimator, DecreasesWithSeparation) {
  double prev = std::numeric_limits<double>::infinity();
  for (double d : {0.0, 1.0, 2.0, 3.0, 4.0, 5.0}) {
    const auto xi =
        estimate_parametric(sample_mixture(MixtureSpec::two_gaussians(d), 3000, 11)).xi_hat;
    EXPECT_LT(xi, prev) << "D = " << d;
    prev = xi;
  }
}

TEST(ParametricEstimator, DeterministicGivenSeed) {
  const auto s = gaussian_samples(3000, 25);
  ParametricEstimatorConfig c;
  c.seed = 5;
  c.iterations = 300;
  const auto a = estimate_parametric(s, c);
  const auto b = estimate_parametric(s, c);
  EXPECT_EQ(a.xi_hat, b.xi_hat);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  EXPECT_NEAR(estimate_parametric(permuted(s, 4), c).xi_hat / a.xi_hat, 1.0, 0.05);
}

TEST(ParametricEstimator, ScalesInverseSquare) {
  const auto s = gaussian_samples(3000, 26);
  const double base = estimate_parametric(s).xi_hat;
  EXPECT_NEAR(estimate_parametric(scaled(s, 2.0)).xi_hat * 4.0 / base, 1.0, 0.05);
}

TEST(ParametricEstimator, FlagsOscillation) {
  ParametricEstimatorConfig c;
  c.step_size = 50.0;
  c.batch_size = 64;
  c.iterations = 400;
  const auto e = estimate_parametric(gaussian_samples(3000, 27), c);
  EXPECT_FALSE(e.converged);
  EXPECT_GT(e.xi_hat, 0.0);
}

TEST(ParametricEstimator, RejectsBadConfig) {
  const auto s = gaussian_samples(100, 1);
  ParametricEstimatorConfig c;
  expect_error([&] { estimate_parametric(s, c); }, "InvalidArgument");
  c.batch_size = 50;
  c.n_centers = 0;
  expect_error([&] { estimate_parametric(s, c); }, "InvalidArgument");
  c.n_centers = 4;
  c.iterations = 0;
  expect_error([&] { estimate_parametric(s, c); }, "InvalidArgument");
  c.iterations = 10;
  c.length_scale = -1.0;
  expect_error([&] { estimate_parametric(s, c); }, "InvalidArgument");
}

TEST(GridReference, StandardGaussianNearOne) {
  const auto e = estimate_grid_reference(gaussian_samples(100000, 31));
  EXPECT_NEAR(e.xi_hat, 1.0, 0.05);
  EXPECT_EQ(e.estimator, "grid");
  EXPECT_EQ(e.config_echo["shape"][0], 801);
}

TEST(GridReference, ScalesInverseSquare) {
  const auto s = gaussian_samples(100000, 32);
  const double base = estimate_grid_reference(s).xi_hat;
  for (double f : {0.5, 2.0}) {
    const double ratio = estimate_grid_reference(scaled(s, f)).xi_hat * f * f / base;
    EXPECT_GE(ratio, 0.95);
    EXPECT_LE(ratio, 1.05);
  }
}

TEST(GridReference, DecreasesWithSeparation) {
  double prev = std::numeric_limits<double>::infinity();
  for (double d : {0.0, 1.0, 2.0, 3.0, 4.0, 5.0}) {
    const auto xi =
        estimate_grid_reference(sample_mixture(MixtureSpec::two_gaussians(d), 10000, 33)).xi_hat;
    EXPECT_LT(xi, prev) << "D = " << d;
    prev = xi;
  }
}

TEST(GridReference, AgreesWithGraphAtFour) {
  const auto s = sample_mixture(MixtureSpec::two_gaussians(4.0), 10000, 34);
  const double grid = estimate_grid_reference(s).xi_hat;
  EXPECT_NEAR(estimate_graph(s).xi_hat / grid, 1.0, 0.35);
}

TEST(GridReference, PermutationInvariant) {
  const auto s = sample_mixture(MixtureSpec::two_gaussians(2.0), 5000, 35);
  const double a = estimate_grid_reference(s).xi_hat;
  EXPECT_NEAR(estimate_grid_reference(permuted(s, 1)).xi_hat, a, 1e-9 * a);
}

TEST(GridReference, TwoDimensionalAgreement) {
  MixtureSpec spec;
  spec.components = {{0.5, {0.0, 0.0}, {1.0, 1.0}}, {0.5, {3.0, 0.0}, {1.0, 1.0}}};
  const auto s = sample_mixture(spec, 10000, 36);
  const double grid = estimate_grid_reference(s).xi_hat;
  EXPECT_NEAR(grid, 0.25, 0.05);
  EXPECT_NEAR(estimate_graph(s).xi_hat / grid, 1.0, 0.35);
  EXPECT_NEAR(estimate_parametric(s).xi_hat / grid, 1.0, 0.35);
}

TEST(GridReference, RejectsHighDimension) {
  SampleSet s;
  s.points = Eigen::MatrixXd::Random(100, 3);
  expect_error([&] { estimate_grid_reference(s); }, "DimensionTooHigh");
  expect_error([&] { estimate_grid_reference(gaussian_samples(100, 1), -1.0); },
               "InvalidBandwidth");
}
