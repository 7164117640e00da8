#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <vector>

#include "substadj/core_model.hpp"
#include "substadj/error.hpp"
#include "substadj/recover.hpp"

namespace substadj {

struct GroupMeans {
  Eigen::VectorXd means;     // NaN for empty classes
  std::vector<int> counts;
  std::vector<bool> empty;
};

inline GroupMeans group_means(const Eigen::VectorXd& values, const Labels& labels, int K) {
  require(static_cast<Eigen::Index>(labels.size()) == values.size(), ErrorCode::LengthMismatch,
          "values and labels differ in length");
  GroupMeans out;
  out.means = Eigen::VectorXd::Zero(K);
  out.counts = count_labels(labels, K);
  out.empty.assign(K, false);
  for (std::size_t k = 0; k < labels.size(); ++k) out.means(labels[k] - 1) += values(k);
  for (int z = 0; z < K; ++z) {
    if (out.counts[z] == 0) {
      out.empty[z] = true;
      out.means(z) = std::numeric_limits<double>::quiet_NaN();
    } else {
      out.means(z) /= out.counts[z];
    }
  }
  return out;
}

namespace detail {

/// cols(A) x K matrix; column z holds the class-z mean of every column of A.
inline Eigen::MatrixXd class_means_of_columns(const Eigen::MatrixXd& A, const Labels& labels,
                                              const std::vector<int>& counts) {
  const auto K = static_cast<Eigen::Index>(counts.size());
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(A.cols(), K);
  for (Eigen::Index k = 0; k < A.rows(); ++k) means.col(labels[k] - 1) += A.row(k).transpose();
  for (Eigen::Index z = 0; z < K; ++z) {
    if (counts[z] > 0)
      means.col(z) /= counts[z];
    else
      means.col(z).setConstant(std::numeric_limits<double>::quiet_NaN());
  }
  return means;
}

inline Eigen::MatrixXd residualize(const Eigen::MatrixXd& A, const Labels& labels, const Eigen::MatrixXd& means) {
  Eigen::MatrixXd R = A;
  for (Eigen::Index k = 0; k < A.rows(); ++k) R.row(k) -= means.col(labels[k] - 1).transpose();
  return R;
}

inline Eigen::VectorXd residualize(const Eigen::VectorXd& v, const Labels& labels, const Eigen::VectorXd& means) {
  Eigen::VectorXd r = v;
  for (Eigen::Index k = 0; k < v.size(); ++k) r(k) -= means(labels[k] - 1);
  return r;
}

/// Residual sums of squares at or below this fraction of ||x||^2 are zero.
inline constexpr double kZeroResidualRatio = 1e-26;

}  // namespace detail

struct EstimateResult {
  Eigen::VectorXd beta_sub;                    // NaN where undefined
  std::optional<Eigen::VectorXd> beta_oracle;
  Eigen::VectorXd group_means_y;               // g-hat(z)
  Eigen::MatrixXd group_means_x;               // p x K, mu-hat_i(z)
  std::vector<int> skipped_classes;            // empty labels (1-based)
  std::vector<int> undefined_coordinates;      // zero residual variance (0-based i)
};

/// beta_i = <x_i - mu(z), y - g(z)> / ||x_i - mu(z)||^2 for every coordinate,
/// i.e. the OLS slope of x_i with class dummies. y is residualized once.
inline EstimateResult adjusted_regression(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Labels& labels,
                                          int K) {
  require(X.rows() == y.size(), ErrorCode::DimensionMismatch, "X rows must equal length of y");
  require(static_cast<Eigen::Index>(labels.size()) == X.rows(), ErrorCode::DimensionMismatch,
          "labels must have length n");
  const auto counts = count_labels(labels, K);
  EstimateResult out;
  const auto gy = group_means(y, labels, K);
  out.group_means_y = gy.means;
  out.group_means_x = detail::class_means_of_columns(X, labels, counts);
  for (int z = 0; z < K; ++z)
    if (counts[z] == 0) out.skipped_classes.push_back(z + 1);

  const Eigen::VectorXd ry = detail::residualize(y, labels, gy.means);
  const Eigen::MatrixXd RX = detail::residualize(X, labels, out.group_means_x);
  const Eigen::VectorXd num = RX.transpose() * ry;
  const Eigen::VectorXd den = RX.colwise().squaredNorm().transpose();
  const Eigen::VectorXd xnorm2 = X.colwise().squaredNorm().transpose();
  out.beta_sub.resize(X.cols());
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    if (den(i) <= detail::kZeroResidualRatio * xnorm2(i) || den(i) == 0.0) {
      out.beta_sub(i) = std::numeric_limits<double>::quiet_NaN();
      out.undefined_coordinates.push_back(static_cast<int>(i));
    } else {
      out.beta_sub(i) = num(i) / den(i);
    }
  }
  return out;
}

/// Substitute-adjusted estimator. Coordinates with zero within-class
/// variance are NaN and listed in undefined_coordinates.
inline EstimateResult substitute_beta(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Labels& z_sub,
                                      int K) {
  return adjusted_regression(X, y, z_sub, K);
}

/// Same estimator computed with the true labels.
inline Eigen::VectorXd oracle_beta(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Labels& z_true, int K) {
  return adjusted_regression(X, y, z_true, K).beta_sub;
}

/// Throws ZeroResidualVariance if coordinate i is undefined.
inline double require_defined(const EstimateResult& r, int i) {
  const double b = r.beta_sub(i);
  if (std::isnan(b))
    throw Error(ErrorCode::ZeroResidualVariance, "coordinate " + std::to_string(i) + " has no within-class variance");
  return b;
}

/// min{RSS under true labels, RSS under substitutes} / ||x||^2.
inline double rho(const Eigen::VectorXd& x, const Labels& z_true, const Labels& z_sub, int K) {
  require(x.size() == static_cast<Eigen::Index>(z_true.size()) && z_true.size() == z_sub.size(),
          ErrorCode::LengthMismatch, "x and label vectors differ in length");
  const double nx = x.squaredNorm();
  require(nx > 0.0, ErrorCode::ZeroNorm, "||x_i|| is zero");
  const auto mt = group_means(x, z_true, K);
  const auto ms = group_means(x, z_sub, K);
  const double rss_true = detail::residualize(x, z_true, mt.means).squaredNorm();
  const double rss_sub = detail::residualize(x, z_sub, ms.means).squaredNorm();
  return std::min(rss_true, rss_sub) / nx;
}

struct ProjectionNorm {
  double norm = 0.0;   // ||P_Z - P_Zhat||_2
  double bound = 0.0;  // sqrt(2 delta / alpha)
  bool holds = true;
};

/// Spectral norm of the difference of the two class-indicator projections.
/// For equal-rank projections ||P - Q|| = ||(I - P) Q||, whose Gram matrix
/// in the orthonormal basis of Q is the K x K matrix
///   G_vw = delta_vw - sum_z C_zv C_zw / (n_z sqrt(nhat_v nhat_w)),
/// with C the co-label count matrix. The diagonal is accumulated as
/// sum_z C_zv (n_z - C_zv) / (n_z nhat_v), which has no cancellation.
inline ProjectionNorm projection_diff_norm(const Labels& z_true, const Labels& z_sub, int K) {
  const auto counts = class_counts_alpha(z_true, z_sub, K);
  require(counts.alpha > 0.0, ErrorCode::RankDeficient, "an indicator matrix has an empty class");
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(K, K);
  for (std::size_t k = 0; k < z_true.size(); ++k) C(z_true[k] - 1, z_sub[k] - 1) += 1.0;
  Eigen::MatrixXd G(K, K);
  for (int v = 0; v < K; ++v)
    for (int w = 0; w < K; ++w) {
      double s = 0.0;
      for (int z = 0; z < K; ++z) {
        const double nz = counts.n_true[z];
        s += (v == w) ? C(z, v) * (nz - C(z, v)) / nz : -C(z, v) * C(z, w) / nz;
      }
      G(v, w) = s / std::sqrt(static_cast<double>(counts.n_sub[v]) * counts.n_sub[w]);
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
  ProjectionNorm out;
  out.norm = std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
  out.bound = std::sqrt(2.0 * mislabel_rate(z_true, z_sub) / counts.alpha);
  out.holds = out.norm <= out.bound;
  return out;
}

struct BoundReport {
  double alpha = 0.0;
  double delta = 0.0;
  double rho = 0.0;
  double beta_sub = 0.0;
  double beta_oracle = 0.0;
  double bound_thm1 = 0.0;
  double observed_gap = 0.0;
  double proj_norm = 0.0;
  double proj_bound = 0.0;
  bool holds_thm1 = true;
  bool holds_lemmaA1 = true;
};

/// Evaluates both sides of the substitution error bound
///   |beta_sub - beta_oracle| <= 2 sqrt(2) / rho^2 sqrt(delta / alpha) ||y|| / ||x_i||
/// and of the projection bound for coordinate i (0-based).
inline BoundReport theorem1_bound(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int i, const Labels& z_true,
                                  const Labels& z_sub, int K) {
  require(i >= 0 && i < X.cols(), ErrorCode::InvalidArgument, "coordinate out of range");
  require(X.rows() == y.size(), ErrorCode::DimensionMismatch, "X rows must equal length of y");
  BoundReport r;
  const auto counts = class_counts_alpha(z_true, z_sub, K);
  r.alpha = counts.alpha;
  r.delta = mislabel_rate(z_true, z_sub);
  if (r.alpha <= 0.0) throw Error(ErrorCode::DegenerateInputs, "alpha = 0 (empty class)");
  const Eigen::VectorXd x = X.col(i);
  r.rho = rho(x, z_true, z_sub, K);
  if (r.rho <= 0.0) throw Error(ErrorCode::DegenerateInputs, "rho = 0 (no within-class variation)");

  const Eigen::MatrixXd xi = x;
  r.beta_sub = require_defined(adjusted_regression(xi, y, z_sub, K), 0);
  r.beta_oracle = require_defined(adjusted_regression(xi, y, z_true, K), 0);
  r.observed_gap = std::abs(r.beta_sub - r.beta_oracle);
  r.bound_thm1 = 2.0 * std::sqrt(2.0) / (r.rho * r.rho) * std::sqrt(r.delta / r.alpha) * y.norm() / x.norm();
  r.holds_thm1 = r.observed_gap <= r.bound_thm1;

  const auto pn = projection_diff_norm(z_true, z_sub, K);
  r.proj_norm = pn.norm;
  r.proj_bound = pn.bound;
  r.holds_lemmaA1 = pn.holds;
  return r;
}

}  // namespace substadj
