#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "substadj/core_model.hpp"
#include "substadj/error.hpp"
#include "substadj/recover.hpp"
#include "substadj/rng.hpp"

namespace substadj {

struct RidgeFit {
  Eigen::VectorXd beta;
  std::optional<Eigen::VectorXd> gamma;  // augmented fits only
  double intercept = 0.0;                // zero for augmented fits (absorbed in gamma)
  double lambda_chosen = 0.0;
  std::vector<std::pair<double, double>> cv_curve;  // (lambda, mean fold loss)
};

struct RidgeOptions {
  int folds = 5;
  int grid_points = 50;
  double grid_lo = 1e-4;
  double grid_hi = 1e4;
  bool extend_to_ols = false;  // append a near-zero lambda (naive OLS)
  SimSeed seed{0xC0FFEE, 0};
};

/// Log-spaced grid over [lo, hi] * mean(X^2), ascending.
inline std::vector<double> default_lambda_grid(const Eigen::MatrixXd& X, const RidgeOptions& opts = {}) {
  require(opts.grid_points >= 1, ErrorCode::InvalidArgument, "grid needs at least one point");
  double scale = X.squaredNorm() / static_cast<double>(X.size());
  if (!(scale > 0.0)) scale = 1.0;
  std::vector<double> grid;
  if (opts.extend_to_ols) grid.push_back(1e-8 * opts.grid_lo * scale);
  const double a = std::log(opts.grid_lo), b = std::log(opts.grid_hi);
  for (int j = 0; j < opts.grid_points; ++j) {
    const double t = opts.grid_points == 1 ? 0.0 : static_cast<double>(j) / (opts.grid_points - 1);
    grid.push_back(scale * std::exp(a + t * (b - a)));
  }
  return grid;
}

namespace detail {

/// Closed-form ridge path for a centred design: the eigendecomposition of the
/// smaller Gram matrix is computed once and reused for every lambda.
class RidgePath {
 public:
  RidgePath(const Eigen::MatrixXd& Xc, const Eigen::VectorXd& yc) : Xc_(Xc), dual_(Xc.cols() > Xc.rows()) {
    const Eigen::MatrixXd G = dual_ ? Eigen::MatrixXd(Xc * Xc.transpose()) : Eigen::MatrixXd(Xc.transpose() * Xc);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    if (es.info() != Eigen::Success) throw Error(ErrorCode::SingularSystem, "ridge eigensolver failed");
    V_ = es.eigenvectors();
    s_ = es.eigenvalues().cwiseMax(0.0);
    proj_ = dual_ ? Eigen::VectorXd(V_.transpose() * yc) : Eigen::VectorXd(V_.transpose() * (Xc.transpose() * yc));
  }

  Eigen::VectorXd beta(double lambda) const {
    Eigen::VectorXd c = proj_.array() / (s_.array() + lambda);
    if (!c.allFinite()) throw Error(ErrorCode::SingularSystem, "X^T X + lambda I is singular");
    return dual_ ? Eigen::VectorXd(Xc_.transpose() * (V_ * c)) : Eigen::VectorXd(V_ * c);
  }

 private:
  Eigen::MatrixXd Xc_;
  bool dual_;
  Eigen::MatrixXd V_;
  Eigen::VectorXd s_;
  Eigen::VectorXd proj_;
};

/// Group-centred design for the rows in `rows`: each row minus its class
/// mean over those rows. Class means feed the unpenalized offsets.
struct CentredDesign {
  Eigen::MatrixXd Xc;
  Eigen::VectorXd yc;
  Eigen::MatrixXd x_means;  // p x K
  Eigen::VectorXd y_means;  // K
  std::vector<int> counts;
  Eigen::VectorXd x_pooled;
  double y_pooled = 0.0;
};

inline CentredDesign centre_by_group(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Labels& labels, int K,
                                     const std::vector<int>& rows) {
  CentredDesign d;
  const auto p = X.cols();
  const auto m = static_cast<Eigen::Index>(rows.size());
  d.counts.assign(K, 0);
  d.x_means = Eigen::MatrixXd::Zero(p, K);
  d.y_means = Eigen::VectorXd::Zero(K);
  for (int r : rows) {
    const int z = labels[r] - 1;
    ++d.counts[z];
    d.x_means.col(z) += X.row(r).transpose();
    d.y_means(z) += y(r);
  }
  d.x_pooled = d.x_means.rowwise().sum() / static_cast<double>(m);
  d.y_pooled = d.y_means.sum() / static_cast<double>(m);
  for (int z = 0; z < K; ++z) {
    if (d.counts[z] > 0) {
      d.x_means.col(z) /= d.counts[z];
      d.y_means(z) /= d.counts[z];
    }
  }
  d.Xc.resize(m, p);
  d.yc.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const int r = rows[j];
    const int z = labels[r] - 1;
    d.Xc.row(j) = X.row(r) - d.x_means.col(z).transpose();
    d.yc(j) = y(r) - d.y_means(z);
  }
  return d;
}

/// gamma_z = ybar_z - xbar_z^T beta; classes unseen in the fitting rows fall
/// back to the pooled offset.
inline Eigen::VectorXd group_offsets(const CentredDesign& d, const Eigen::VectorXd& beta) {
  const auto K = static_cast<Eigen::Index>(d.counts.size());
  const double pooled = d.y_pooled - d.x_pooled.dot(beta);
  Eigen::VectorXd g(K);
  for (Eigen::Index z = 0; z < K; ++z)
    g(z) = d.counts[z] > 0 ? d.y_means(z) - d.x_means.col(z).dot(beta) : pooled;
  return g;
}

inline std::vector<int> fold_assignment(int n, int folds, SimSeed seed) {
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(static_cast<std::uint64_t>(i) + 1)]);
  std::vector<int> fold(n);
  for (int j = 0; j < n; ++j) fold[perm[j]] = j % folds;
  return fold;
}

inline RidgeFit fit_grouped_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Labels& labels, int K,
                                  const std::vector<double>& grid, int folds, SimSeed seed, bool augmented) {
  const int n = static_cast<int>(X.rows());
  require(y.size() == n && static_cast<int>(labels.size()) == n, ErrorCode::DimensionMismatch,
          "X, y and labels must share n");
  require(folds >= 2 && n >= folds, ErrorCode::InvalidArgument, "need n >= folds >= 2");
  require(!grid.empty(), ErrorCode::InvalidArgument, "lambda grid is empty");
  for (double l : grid) require(l > 0.0 && std::isfinite(l), ErrorCode::InvalidArgument, "lambda must be positive");
  for (int z : labels) require(z >= 1 && z <= K, ErrorCode::InvalidArgument, "label outside {1..K}");

  std::vector<double> lambdas = grid;
  std::sort(lambdas.begin(), lambdas.end());

  const auto fold = fold_assignment(n, folds, seed);
  std::vector<double> loss(lambdas.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    std::vector<int> train, test;
    for (int r = 0; r < n; ++r) (fold[r] == f ? test : train).push_back(r);
    const auto d = centre_by_group(X, y, labels, K, train);
    const RidgePath path(d.Xc, d.yc);
    for (std::size_t j = 0; j < lambdas.size(); ++j) {
      const Eigen::VectorXd b = path.beta(lambdas[j]);
      const Eigen::VectorXd g = group_offsets(d, b);
      double sse = 0.0;
      for (int r : test) {
        const double e = y(r) - X.row(r).dot(b) - g(labels[r] - 1);
        sse += e * e;
      }
      loss[j] += sse / static_cast<double>(test.size());
    }
  }

  RidgeFit fit;
  std::size_t best = 0;
  for (std::size_t j = 0; j < lambdas.size(); ++j) {
    loss[j] /= folds;
    fit.cv_curve.emplace_back(lambdas[j], loss[j]);
    if (loss[j] < loss[best]) best = j;
  }
  fit.lambda_chosen = lambdas[best];

  std::vector<int> all(n);
  for (int r = 0; r < n; ++r) all[r] = r;
  const auto d = centre_by_group(X, y, labels, K, all);
  fit.beta = RidgePath(d.Xc, d.yc).beta(fit.lambda_chosen);
  const Eigen::VectorXd g = group_offsets(d, fit.beta);
  if (augmented) {
    fit.gamma = g;
  } else {
    fit.intercept = g(0);
  }
  return fit;
}

}  // namespace detail

/// min ||y - b0 - X b||^2 + lambda ||b||^2 with an unpenalized intercept and
/// lambda chosen by k-fold cross-validation on mean squared prediction error.
inline RidgeFit ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const std::vector<double>& lambda_grid,
                      int folds = 5, SimSeed seed = RidgeOptions{}.seed) {
  const Labels one(static_cast<std::size_t>(X.rows()), 1);
  return detail::fit_grouped_ridge(X, y, one, 1, lambda_grid, folds, seed, false);
}

/// Ridge on [X, Zhat] with the dummy block Zhat unpenalized. The dummies are
/// partialled out by group-centring, which also absorbs the intercept.
inline RidgeFit augmented_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Labels& z_sub, int K,
                                const std::vector<double>& lambda_grid, int folds = 5,
                                SimSeed seed = RidgeOptions{}.seed) {
  return detail::fit_grouped_ridge(X, y, z_sub, K, lambda_grid, folds, seed, true);
}

/// Full-data ridge solution at a fixed lambda (no cross-validation).
inline Eigen::VectorXd ridge_at(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda) {
  require(lambda > 0.0, ErrorCode::InvalidArgument, "lambda must be positive");
  std::vector<int> all(static_cast<std::size_t>(X.rows()));
  for (std::size_t r = 0; r < all.size(); ++r) all[r] = static_cast<int>(r);
  const Labels one(all.size(), 1);
  const auto d = detail::centre_by_group(X, y, one, 1, all);
  return detail::RidgePath(d.Xc, d.yc).beta(lambda);
}

}  // namespace substadj
