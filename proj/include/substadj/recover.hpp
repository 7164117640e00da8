#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "substadj/core_model.hpp"
#include "substadj/error.hpp"
#include "substadj/spectral.hpp"

namespace substadj {

enum class AssignmentSpace { Raw, Whitened };

inline std::string_view to_string(AssignmentSpace s) { return s == AssignmentSpace::Raw ? "raw" : "whitened"; }

inline AssignmentSpace parse_space(std::string_view s) {
  if (s == "raw") return AssignmentSpace::Raw;
  if (s == "whitened") return AssignmentSpace::Whitened;
  throw Error(ErrorCode::ParseError, "unknown assignment space '" + std::string(s) + "'");
}

struct Assignment {
  Labels z_sub;
  Eigen::MatrixXd distances;  // n x K squared distances
  AssignmentSpace space = AssignmentSpace::Whitened;

  double min_distance(int k) const { return distances.row(k).minCoeff(); }
};

/// Nearest-centre labels for the rows of `points` against the columns of
/// `centres`. Ties resolve to the smallest label; a distance counts as tied
/// with the current best when within tie_tol * max(1, best).
inline Assignment nearest_centre(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centres,
                                 AssignmentSpace space, double tie_tol = 0.0) {
  require(tie_tol >= 0.0, ErrorCode::InvalidArgument, "tie tolerance must be nonnegative");
  require(points.cols() == centres.rows(), ErrorCode::DimensionMismatch, "point and centre dimensions differ");
  const auto n = points.rows();
  const auto K = centres.cols();
  require(K >= 1, ErrorCode::InvalidArgument, "need at least one centre");
  Assignment out;
  out.space = space;
  out.distances.resize(n, K);
  out.z_sub.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    int best = 0;
    for (Eigen::Index z = 0; z < K; ++z) {
      out.distances(k, z) = (points.row(k).transpose() - centres.col(z)).squaredNorm();
      const double cur = out.distances(k, best);
      if (out.distances(k, z) < cur - tie_tol * std::max(1.0, cur)) best = static_cast<int>(z);
    }
    out.z_sub[k] = best + 1;
  }
  return out;
}

/// Raw: argmin_z ||x_k - mu_raw(z)||; whitened: argmin_z ||W^T x_k - mu_white(z)||.
inline Assignment assign_substitutes(const Eigen::MatrixXd& X, const ComponentEstimate& est,
                                     AssignmentSpace space = AssignmentSpace::Whitened, double tie_tol = 0.0) {
  if (space == AssignmentSpace::Raw) return nearest_centre(X, est.raw_means, space, tie_tol);
  require(est.whitening.W.rows() == X.cols() && est.whitening.W.cols() == est.whitened_means.rows(),
          ErrorCode::DimensionMismatch, "whitened assignment needs a matching whitening map");
  return nearest_centre(X * est.whitening.W, est.whitened_means, space, tie_tol);
}

namespace detail {

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method,
/// potentials form). Returns row_to_col.
inline std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n);
  for (int j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

/// perm[z-1] is the estimated column (1-based) matched to reference column z,
/// minimizing sum_z ||ref(:, z) - est(:, perm(z))||^2.
inline std::vector<int> align_labels(const Eigen::MatrixXd& means_ref, const Eigen::MatrixXd& means_est) {
  require(means_ref.cols() == means_est.cols(), ErrorCode::DimensionMismatch, "column counts differ");
  require(means_ref.rows() == means_est.rows(), ErrorCode::DimensionMismatch, "row counts differ");
  const auto K = means_ref.cols();
  Eigen::MatrixXd cost(K, K);
  for (Eigen::Index z = 0; z < K; ++z)
    for (Eigen::Index e = 0; e < K; ++e) cost(z, e) = (means_ref.col(z) - means_est.col(e)).squaredNorm();
  auto match = detail::hungarian(cost);
  for (auto& m : match) ++m;
  return match;
}

inline std::vector<int> invert_permutation(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t z = 0; z < perm.size(); ++z) inv[perm[z] - 1] = static_cast<int>(z) + 1;
  return inv;
}

/// Reorders estimate columns so column z is the one matched to reference z.
inline ComponentEstimate apply_alignment(const ComponentEstimate& est, const std::vector<int>& perm) {
  ComponentEstimate out = est;
  for (std::size_t z = 0; z < perm.size(); ++z) {
    const int e = perm[z] - 1;
    out.raw_means.col(z) = est.raw_means.col(e);
    out.whitened_means.col(z) = est.whitened_means.col(e);
    out.weights(z) = est.weights(e);
    out.lambdas(z) = est.lambdas(e);
  }
  return out;
}

/// Maps labels expressed in estimate columns to reference labels.
inline Labels relabel(const Labels& labels, const std::vector<int>& perm) {
  const auto inv = invert_permutation(perm);
  Labels out(labels.size());
  std::transform(labels.begin(), labels.end(), out.begin(), [&](int e) { return inv[e - 1]; });
  return out;
}

inline double mislabel_rate(const Labels& z_true, const Labels& z_sub) {
  require(z_true.size() == z_sub.size(), ErrorCode::LengthMismatch, "label vectors differ in length");
  require(!z_true.empty(), ErrorCode::LengthMismatch, "label vectors are empty");
  std::size_t wrong = 0;
  for (std::size_t k = 0; k < z_true.size(); ++k) wrong += (z_true[k] != z_sub[k]);
  return static_cast<double>(wrong) / static_cast<double>(z_true.size());
}

struct ClassCounts {
  std::vector<int> n_true;  // n(z)
  std::vector<int> n_sub;   // n-hat(z)
  double alpha = 0.0;       // min of all 2K counts over n; 0 flags an empty class
};

inline std::vector<int> count_labels(const Labels& labels, int K) {
  std::vector<int> c(K, 0);
  for (int z : labels) {
    require(z >= 1 && z <= K, ErrorCode::InvalidArgument, "label outside {1..K}");
    ++c[z - 1];
  }
  return c;
}

inline ClassCounts class_counts_alpha(const Labels& z_true, const Labels& z_sub, int K) {
  require(z_true.size() == z_sub.size(), ErrorCode::LengthMismatch, "label vectors differ in length");
  require(!z_true.empty(), ErrorCode::LengthMismatch, "label vectors are empty");
  ClassCounts out;
  out.n_true = count_labels(z_true, K);
  out.n_sub = count_labels(z_sub, K);
  const int m = std::min(*std::min_element(out.n_true.begin(), out.n_true.end()),
                         *std::min_element(out.n_sub.begin(), out.n_sub.end()));
  out.alpha = static_cast<double>(m) / static_cast<double>(z_true.size());
  return out;
}

}  // namespace substadj
