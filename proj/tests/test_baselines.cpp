#include <gtest/gtest.h>

#include <random>

#include "substadj/baselines.hpp"
#include "substadj/simulate.hpp"

using namespace substadj;

namespace {

Eigen::MatrixXd gaussian(int n, int p, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  return Eigen::MatrixXd::NullaryExpr(n, p, [&] { return nd(rng); });
}

}  // namespace

TEST(Ridge, InfiniteShrinkage) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd X = gaussian(40, 6, rng);
  const Eigen::VectorXd y = X.col(0) + Eigen::VectorXd::Constant(40, 3.0);
  const auto fit = ridge(X, y, {1e12}, 5);
  EXPECT_EQ(fit.lambda_chosen, 1e12);
  EXPECT_LT(fit.beta.cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(fit.intercept, y.mean(), 1e-8);
}

TEST(Ridge, OrthonormalClosedForm) {
  std::mt19937_64 rng(2);
  Eigen::MatrixXd A = gaussian(30, 4, rng);
  A.rowwise() -= A.colwise().mean();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(30, 4);
  const Eigen::VectorXd y = gaussian(30, 1, rng);
  for (double lambda : {0.1, 1.0, 7.5}) {
    const Eigen::VectorXd b = ridge_at(Q, y, lambda);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(b(j), Q.col(j).dot(y) / (1.0 + lambda), 1e-12);
    const auto fit = ridge(Q, y, {lambda}, 3);
    EXPECT_LT((fit.beta - b).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Ridge, ZeroOutcome) {
  std::mt19937_64 rng(3);
  const auto fit = ridge(gaussian(20, 30, rng), Eigen::VectorXd::Zero(20), {0.5, 2.0}, 4);
  EXPECT_TRUE(fit.beta.isZero(0.0));
}

TEST(Ridge, PrimalAndDualAgree) {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd X = gaussian(15, 40, rng);
  const Eigen::VectorXd y = gaussian(15, 1, rng);
  const double lambda = 0.8;
  const Eigen::MatrixXd Xc = X.rowwise() - X.colwise().mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  const Eigen::MatrixXd A = Xc.transpose() * Xc + lambda * Eigen::MatrixXd::Identity(40, 40);
  const Eigen::VectorXd direct = A.llt().solve(Xc.transpose() * yc);
  EXPECT_LT((ridge_at(X, y, lambda) - direct).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Ridge, CvMinimumAndDeterminism) {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd X = gaussian(60, 10, rng);
  const Eigen::VectorXd y = X * Eigen::VectorXd::LinSpaced(10, -1, 1) + gaussian(60, 1, rng);
  const auto grid = default_lambda_grid(X);
  EXPECT_EQ(grid.size(), 50u);
  const auto a = ridge(X, y, grid, 5, {9, 1});
  const auto b = ridge(X, y, grid, 5, {9, 1});
  EXPECT_EQ(a.lambda_chosen, b.lambda_chosen);
  EXPECT_EQ(a.beta, b.beta);
  double best = INFINITY, best_l = 0.0;
  for (const auto& [l, loss] : a.cv_curve)
    if (loss < best) {
      best = loss;
      best_l = l;
    }
  EXPECT_EQ(a.lambda_chosen, best_l);
}

TEST(Ridge, MonotoneShrinkage) {
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd X = gaussian(50, 20, rng);
  const Eigen::VectorXd y = gaussian(50, 1, rng);
  double prev = INFINITY;
  for (double l = 1e-3; l < 1e4; l *= 3.0) {
    const double nrm = ridge_at(X, y, l).norm();
    EXPECT_LE(nrm, prev + 1e-12);
    prev = nrm;
  }
}

TEST(Ridge, Preconditions) {
  std::mt19937_64 rng(7);
  const Eigen::MatrixXd X = gaussian(10, 3, rng);
  const Eigen::VectorXd y = gaussian(10, 1, rng);
  EXPECT_THROW(ridge(X, y, {}, 5), Error);
  EXPECT_THROW(ridge(X, y, {0.0}, 5), Error);
  EXPECT_THROW(ridge(X, y, {1.0}, 1), Error);
  EXPECT_THROW(ridge(X, y, {1.0}, 11), Error);
}

TEST(AugmentedRidge, InfiniteShrinkageGivesClassMeans) {
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd X = gaussian(30, 4, rng);
  Labels z(30);
  for (int k = 0; k < 30; ++k) z[k] = 1 + k % 3;
  Eigen::VectorXd y = X.col(1);
  for (int k = 0; k < 30; ++k) y(k) += 10.0 * z[k];
  const auto fit = augmented_ridge(X, y, z, 3, {1e12}, 5);
  ASSERT_TRUE(fit.gamma.has_value());
  for (int c = 1; c <= 3; ++c) {
    double s = 0.0;
    int cnt = 0;
    for (int k = 0; k < 30; ++k)
      if (z[k] == c) {
        s += y(k);
        ++cnt;
      }
    EXPECT_NEAR((*fit.gamma)(c - 1), s / cnt, 1e-8);
  }
}

TEST(AugmentedRidge, ConstantLabelsReduceToRidge) {
  std::mt19937_64 rng(9);
  const Eigen::MatrixXd X = gaussian(45, 12, rng);
  const Eigen::VectorXd y = X.col(0) - X.col(3) + gaussian(45, 1, rng);
  const auto grid = default_lambda_grid(X);
  const auto r = ridge(X, y, grid, 5, {3, 3});
  const auto a = augmented_ridge(X, y, Labels(45, 1), 1, grid, 5, {3, 3});
  EXPECT_EQ(r.lambda_chosen, a.lambda_chosen);
  EXPECT_LT((r.beta - a.beta).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR((*a.gamma)(0), r.intercept, 1e-10);
}

TEST(AugmentedRidge, BeatsRidgeUnderStrongConfounding) {
  const int n = 1000, p = 175, K = 10;
  const auto spec = draw_mixture_spec(K, p, 1.0, {31, 0});
  const auto outcome = draw_outcome_spec(K, p, 200.0, {31, 1});
  const auto d = simulate_outcomes(simulate_covariates(spec, n, p, {31, 2}), spec, outcome, {31, 3});
  const auto grid = default_lambda_grid(d.X);
  const auto r = ridge(d.X, *d.y, grid, 5);
  const auto a = augmented_ridge(d.X, *d.y, *d.z_true, K, grid, 5);
  const double mse_r = (r.beta - outcome.coefficients).squaredNorm() / p;
  const double mse_a = (a.beta - outcome.coefficients).squaredNorm() / p;
  EXPECT_LT(mse_a, mse_r);
}
