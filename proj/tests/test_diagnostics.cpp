#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "substadj/diagnostics.hpp"

using namespace substadj;

TEST(Separation, CoincidentColumns) {
  Eigen::MatrixXd mu(3, 2);
  mu << 1, 1, 2, 2, 3, 3;
  EXPECT_EQ(separation(mu).sep_p, 0.0);
}

TEST(Separation, ScaledOnesVector) {
  const int p = 40;
  const double eps = 0.3;
  Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(p, 2);
  mu.col(1).setConstant(eps);
  const auto s = separation(mu);
  EXPECT_NEAR(s.sep_p, eps * eps * p, 1e-12);
  EXPECT_NEAR(s.strong_sep_slope, eps * eps, 1e-14);
}

TEST(Separation, BruteForcePairs) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 50; ++t) {
    const int K = 2 + t % 5;
    const Eigen::MatrixXd mu = Eigen::MatrixXd::NullaryExpr(5, K, [&] { return nd(rng); });
    double m = INFINITY;
    for (int a = 0; a < K; ++a)
      for (int b = a + 1; b < K; ++b) {
        double s = 0.0;
        for (int i = 0; i < 5; ++i) s += (mu(i, a) - mu(i, b)) * (mu(i, a) - mu(i, b));
        m = std::min(m, s);
      }
    const auto r = separation(mu);
    EXPECT_NEAR(r.sep_p, m, 1e-13);
    EXPECT_TRUE(r.pairwise_sq_dists.isApprox(r.pairwise_sq_dists.transpose()));
    EXPECT_TRUE(r.pairwise_sq_dists.diagonal().isZero(0.0));
  }
}

TEST(Separation, NeedsTwoClasses) { EXPECT_THROW(separation(Eigen::MatrixXd::Zero(3, 1)), Error); }

TEST(RelativeErrors, ExactAndShifted) {
  Eigen::MatrixXd mu(2, 3);
  mu << 0, 3, 0, 0, 0, 4;
  const auto exact = relative_errors(mu, mu);
  EXPECT_TRUE(exact.R.isZero(0.0));
  EXPECT_TRUE(exact.within_tenth);
  Eigen::MatrixXd est = mu;
  est.col(0) += 0.2 * Eigen::Vector2d(0.6, 0.8);
  const auto r = relative_errors(mu, est);
  EXPECT_NEAR(r.R(0, 1), 0.2 / 3.0, 1e-15);
  EXPECT_NEAR(r.R(0, 2), 0.2 / 4.0, 1e-15);
  EXPECT_NEAR(r.max_offdiag, 0.2 / 3.0, 1e-15);
  EXPECT_TRUE(r.within_tenth);
}

TEST(RelativeErrors, CoincidentMeans) {
  Eigen::MatrixXd mu = Eigen::MatrixXd::Ones(2, 2);
  try {
    relative_errors(mu, mu);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CoincidentMeans);
  }
}

TEST(MislabelBounds, PlugInValues) {
  const auto b = mislabel_bounds(10, 1.0, 1000.0, 1.0);
  EXPECT_NEAR(b.chebyshev, 0.25, 1e-15);
  ASSERT_TRUE(b.subgaussian.has_value());
  EXPECT_NEAR(*b.subgaussian, 10.0 * std::exp(-20.0), 1e-22);
  EXPECT_NEAR(*b.subgaussian, 2.06e-8, 0.01e-8);
}

TEST(MislabelBounds, LimitsCapAndErrors) {
  const auto far = mislabel_bounds(10, 1.0, 1e12, 1.0);
  EXPECT_LT(far.chebyshev, 1e-9);
  EXPECT_LT(*far.subgaussian, 1e-300);
  EXPECT_EQ(mislabel_bounds(10, 1.0, 1.0, 1.0).chebyshev, 1.0);
  EXPECT_EQ(*mislabel_bounds(10, 1.0, 1.0, 1.0).subgaussian, 1.0);
  EXPECT_THROW(mislabel_bounds(10, 1.0, 0.0), Error);
}

TEST(MislabelBounds, Monotone) {
  double prev = 2.0;
  for (double s = 10.0; s < 1e5; s *= 2.0) {
    const double c = mislabel_bounds(5, 2.0, s).chebyshev;
    EXPECT_LE(c, prev);
    prev = c;
  }
  EXPECT_LE(mislabel_bounds(3, 1.0, 500.0, 1.0).chebyshev, mislabel_bounds(4, 1.0, 500.0, 1.0).chebyshev);
  EXPECT_LE(*mislabel_bounds(3, 1.0, 500.0, 1.0).subgaussian, *mislabel_bounds(4, 1.0, 500.0, 1.0).subgaussian);
  EXPECT_LE(mislabel_bounds(3, 1.0, 500.0).chebyshev, mislabel_bounds(3, 1.5, 500.0).chebyshev);
}

TEST(MislabelBounds, PairwiseFromSeparation) {
  Eigen::MatrixXd mu(1, 3);
  mu << 0, 10, 30;
  const auto b = mislabel_bounds(3, 1.0, separation(mu));
  EXPECT_NEAR(b.pairwise(0, 1), 25.0 / 100.0, 1e-15);
  EXPECT_NEAR(b.pairwise(1, 2), 25.0 / 400.0, 1e-15);
  EXPECT_NEAR(b.pairwise(0, 2), 25.0 / 900.0, 1e-15);
  EXPECT_EQ(b.pairwise(1, 1), 0.0);
}

TEST(MislabelConstants, DefaultAndGeneral) {
  const auto [c, s] = mislabel_constants(0.1);
  EXPECT_EQ(c, 25.0);
  EXPECT_EQ(s, 50.0);
  // At r = 1/10 the general expression gives (1.2 / 0.24)^2 = 25.
  const double r = 0.1 + 1e-15;
  EXPECT_NEAR(mislabel_constants(r).first, 25.0, 1e-9);
  EXPECT_GT(mislabel_constants(0.2).first, 25.0);
  EXPECT_THROW(mislabel_constants(0.25), Error);
}

TEST(SubgaussianFactor, ByFamily) {
  MixtureSpec s;
  s.K = 1;
  s.weights = Eigen::VectorXd::Ones(1);
  s.means = Eigen::MatrixXd::Zero(3, 1);
  s.variances = Eigen::Vector3d(1.0, 2.0, 0.5);
  EXPECT_EQ(*subgaussian_variance_factor(s, 3), 2.0);
  EXPECT_EQ(*subgaussian_variance_factor(s, 1), 1.0);
  s.family = Family::Uniform;
  EXPECT_EQ(*subgaussian_variance_factor(s, 3), 6.0);
  s.family = Family::Laplace;
  EXPECT_FALSE(subgaussian_variance_factor(s, 3).has_value());
}

TEST(Bhattacharyya, Examples) {
  EXPECT_NEAR(bhattacharyya_gaussian(0.3, 2.0, 0.3, 2.0), 1.0, 1e-15);
  EXPECT_NEAR(bhattacharyya_gaussian(0, 1, 1, 1), std::exp(-1.0 / 8.0), 1e-15);
  EXPECT_NEAR(bhattacharyya_gaussian(0, 1, 1, 1), oracle::bhattacharyya_quadrature(0, 1, 1, 1), 1e-8);
  EXPECT_NEAR(bhattacharyya_gaussian(0, 1, 0, 4), std::sqrt(0.8), 1e-15);
  EXPECT_NEAR(bhattacharyya_gaussian(0, 1, 0, 4), oracle::bhattacharyya_quadrature(0, 1, 0, 4), 1e-8);
  EXPECT_THROW(bhattacharyya_gaussian(0, 0, 0, 1), Error);
}

TEST(Bhattacharyya, LogIdentity) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> mu(-3, 3), s2(0.1, 5);
  for (int t = 0; t < 200; ++t) {
    const double m1 = mu(rng), m2 = mu(rng), a = s2(rng), b = s2(rng);
    const double lhs = -std::log(bhattacharyya_gaussian(m1, a, m2, b));
    const double rhs = 0.5 * kakutani_var_term(a, b) + 0.25 * kakutani_mean_term(m1, a, m2, b);
    EXPECT_NEAR(lhs, rhs, 1e-12);
  }
}

TEST(Kakutani, ConstantGapsRecoverable) {
  const int p = 1000;
  const auto r = kakutani_partial_sums(Eigen::VectorXd::Constant(p, 0.5), Eigen::VectorXd::Ones(p),
                                       Eigen::VectorXd::Zero(p), Eigen::VectorXd::Ones(p));
  // Each term is 0.25 / 2.
  EXPECT_NEAR(r.mean_series_partial.back(), 125.0, 1e-10);
  EXPECT_EQ(r.var_series_partial.back(), 0.0);
  EXPECT_GT(r.mean_evidence.tail_slope, 0.0);
  EXPECT_EQ(r.verdict, Verdict::Recoverable);
}

TEST(Kakutani, HarmonicGapsNotRecoverable) {
  const int p = 1000;
  Eigen::VectorXd gaps(p);
  for (int i = 0; i < p; ++i) gaps(i) = 1.0 / (i + 1);
  const auto r = kakutani_partial_sums(gaps, Eigen::VectorXd::Ones(p), Eigen::VectorXd::Zero(p),
                                       Eigen::VectorXd::Ones(p));
  EXPECT_LE(r.mean_series_partial.back(), std::numbers::pi * std::numbers::pi / 12.0);
  EXPECT_EQ(r.var_series_partial.back(), 0.0);
  EXPECT_EQ(r.verdict, Verdict::NotRecoverable);
}

TEST(Kakutani, IdenticalComponents) {
  const int p = 200;
  const auto r = kakutani_partial_sums(Eigen::VectorXd::Ones(p), Eigen::VectorXd::Ones(p), Eigen::VectorXd::Ones(p),
                                       Eigen::VectorXd::Ones(p));
  EXPECT_EQ(r.mean_series_partial.back(), 0.0);
  EXPECT_EQ(r.verdict, Verdict::NotRecoverable);
  for (double b : r.bc_products) EXPECT_EQ(b, 1.0);
}

TEST(Kakutani, VarianceSeriesAloneRecoverable) {
  const int p = 2000;
  const auto r = kakutani_partial_sums(Eigen::VectorXd::Zero(p), Eigen::VectorXd::Ones(p), Eigen::VectorXd::Zero(p),
                                       Eigen::VectorXd::Constant(p, 4.0));
  EXPECT_EQ(r.mean_series_partial.back(), 0.0);
  EXPECT_EQ(r.verdict, Verdict::Recoverable);
}

TEST(Kakutani, SpecInvariantsAndFamily) {
  auto spec = draw_mixture_spec(3, 300, 1.0, {3, 0});
  spec.variances.col(1).setConstant(1.7);
  const auto r = kakutani_partial_sums(spec, 1, 2, 300);
  for (std::size_t i = 1; i < r.mean_series_partial.size(); ++i) {
    EXPECT_GE(r.mean_series_partial[i], r.mean_series_partial[i - 1]);
    EXPECT_GE(r.var_series_partial[i], r.var_series_partial[i - 1]);
    EXPECT_LE(r.bc_products[i], r.bc_products[i - 1]);
    EXPECT_GT(r.bc_products[i], 0.0);
  }
  EXPECT_THROW(kakutani_partial_sums(spec, 2, 2, 10), Error);
  spec.family = Family::Laplace;
  try {
    kakutani_partial_sums(spec, 1, 2, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonGaussianFamily);
  }
}

TEST(MonteCarlo, WellSeparatedAndOverlapping) {
  const auto spec = draw_mixture_spec(4, 200, 1.0, {4, 0});
  const auto far = monte_carlo_mislabel(spec, 200, spec.means.topRows(200), 5000, {4, 1});
  EXPECT_EQ(far.rate, 0.0);
  EXPECT_EQ(far.draws, 5000);
  MixtureSpec two;
  two.K = 2;
  two.weights = Eigen::Vector2d(0.5, 0.5);
  two.means = Eigen::MatrixXd(1, 2);
  two.means << -1, 1;
  two.variances = Eigen::MatrixXd::Ones(1, 2);
  const auto mc = monte_carlo_mislabel(two, 1, two.means, 200000, {4, 2});
  // P(N(0,1) > 1)
  const double exact = 0.5 * std::erfc(1.0 / std::sqrt(2.0));
  EXPECT_NEAR(mc.rate, exact, 4.0 * mc.std_error);
}
