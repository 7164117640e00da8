#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "substadj/core_model.hpp"
#include "substadj/error.hpp"
#include "substadj/rng.hpp"

namespace substadj {

// ---------------------------------------------------------------------------
// Second moment with unknown diagonal
// ---------------------------------------------------------------------------

struct CompletionOptions {
  double tol = 1e-8;
  int max_iter = 100;
};

/// Diagonal-completed second moment. The off-diagonal entries are the
/// empirical E[X_i X_j]; the diagonal is the fixed point of "replace the
/// diagonal by that of the rank-K reconstruction".
struct SecondMomentCompletion {
  Eigen::MatrixXd completed;
  Eigen::VectorXd top_values;   // descending, length K
  Eigen::MatrixXd top_vectors;  // p x K, orthonormal columns
  int iterations = 0;
  double last_change = 0.0;
  bool converged = false;
};

namespace detail {

struct EigenPairs {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // matching columns
};

/// Largest entry (in magnitude) of each column made positive.
inline void fix_signs(Eigen::MatrixXd& V) {
  for (Eigen::Index j = 0; j < V.cols(); ++j) {
    Eigen::Index arg = 0;
    V.col(j).cwiseAbs().maxCoeff(&arg);
    if (V(arg, j) < 0.0) V.col(j) = -V.col(j);
  }
}

/// Top-L eigenpairs (algebraically largest) via a dense symmetric solver.
inline EigenPairs top_eigenpairs_dense(const Eigen::MatrixXd& A, int L, double* smallest = nullptr) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  if (es.info() != Eigen::Success) throw Error(ErrorCode::ConvergenceFailure, "symmetric eigensolver failed");
  EigenPairs out;
  out.values = es.eigenvalues().tail(L).reverse();
  out.vectors = es.eigenvectors().rightCols(L).rowwise().reverse();
  if (smallest) *smallest = es.eigenvalues()(0);
  return out;
}

/// Shifted block power iteration with Rayleigh-Ritz, warm-started from Q.
/// Stops when the residual of the leading K pairs drops below target.
inline EigenPairs refine_subspace(const Eigen::MatrixXd& A, double shift, Eigen::MatrixXd& Q, int K,
                                  double target, int max_steps) {
  EigenPairs out;
  for (int step = 0; step < max_steps; ++step) {
    Eigen::MatrixXd Y = A * Q + shift * Q;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Y);
    Q = qr.householderQ() * Eigen::MatrixXd::Identity(Y.rows(), Y.cols());
    Eigen::MatrixXd AQ = A * Q;
    Eigen::MatrixXd H = Q.transpose() * AQ;
    H = 0.5 * (H + H.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    const Eigen::MatrixXd V = es.eigenvectors().rowwise().reverse();
    Q = Q * V;
    AQ = AQ * V;
    out.values = es.eigenvalues().reverse();
    const Eigen::MatrixXd R = AQ.leftCols(K) - Q.leftCols(K) * out.values.head(K).asDiagonal();
    const double scale = std::max(1.0, out.values.cwiseAbs().maxCoeff());
    if (R.norm() <= target * scale) break;
  }
  out.vectors = Q;
  return out;
}

}  // namespace detail

/// Completes the diagonal of a symmetric matrix whose off-diagonal part is
/// known. Initial diagonal: the row-wise largest off-diagonal magnitude.
/// Non-convergence is reported through the flag, never thrown.
inline SecondMomentCompletion complete_second_moment(const Eigen::MatrixXd& offdiag, int K,
                                                     const CompletionOptions& opts = {}) {
  const int p = static_cast<int>(offdiag.rows());
  require(offdiag.cols() == p, ErrorCode::DimensionMismatch, "second moment must be square");
  require(K >= 1 && K < p, ErrorCode::InvalidArgument, "need 1 <= K < p");

  Eigen::MatrixXd B = offdiag;
  Eigen::VectorXd d(p);
  for (int i = 0; i < p; ++i) {
    double m = 0.0;
    for (int j = 0; j < p; ++j)
      if (j != i) m = std::max(m, std::abs(offdiag(i, j)));
    d(i) = m;
  }
  B.diagonal() = d;
  const Eigen::VectorXd d0 = d;

  // Dense solves are cheap for small p; above that a warm-started block
  // iteration tracks the leading subspace while the diagonal moves.
  const int L = std::min(p, 2 * K + 10);
  const bool dense = p <= 3 * L || p <= 150;
  double lambda_min = 0.0;
  detail::EigenPairs eig = detail::top_eigenpairs_dense(B, L, &lambda_min);
  Eigen::MatrixXd Q = eig.vectors;

  SecondMomentCompletion out;
  for (int it = 1; it <= opts.max_iter; ++it) {
    const Eigen::MatrixXd UK = eig.vectors.leftCols(K);
    Eigen::VectorXd d_new = (UK.array().square().matrix() * eig.values.head(K));
    const double change = (d_new - d).cwiseAbs().maxCoeff();
    d = d_new;
    B.diagonal() = d;
    out.iterations = it;
    out.last_change = change;
    if (change < opts.tol) {
      out.converged = true;
      break;
    }
    if (dense) {
      eig = detail::top_eigenpairs_dense(B, L);
    } else {
      const double shift = std::max(0.0, -lambda_min + (d - d0).cwiseAbs().maxCoeff()) + 1e-3;
      eig = detail::refine_subspace(B, shift, Q, K, std::max(1e-12, 1e-2 * change), 50);
    }
  }

  eig = detail::top_eigenpairs_dense(B, K);
  detail::fix_signs(eig.vectors);
  out.completed = std::move(B);
  out.top_values = eig.values;
  out.top_vectors = eig.vectors;
  return out;
}

/// Off-diagonal entries (1/n) sum_k x_ik x_jk, diagonal completed to rank K.
inline SecondMomentCompletion offdiag_second_moment(const Eigen::MatrixXd& X, int K,
                                                    const CompletionOptions& opts = {}) {
  require(X.rows() >= 2, ErrorCode::InvalidArgument, "need n >= 2");
  require(X.cols() >= K + 1, ErrorCode::InvalidArgument, "need p >= K + 1");
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(X.cols(), X.cols());
  M.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose(), 1.0 / static_cast<double>(X.rows()));
  M = M.selfadjointView<Eigen::Lower>();
  M.diagonal().setZero();
  return complete_second_moment(M, K, opts);
}

// ---------------------------------------------------------------------------
// Whitening
// ---------------------------------------------------------------------------

struct WhiteningMap {
  Eigen::MatrixXd W;               // p x K
  Eigen::VectorXd eigenvalues;     // top-K eigenvalues of the completed matrix
  Eigen::VectorXd completed_diagonal;

  int p() const { return static_cast<int>(W.rows()); }
  int K() const { return static_cast<int>(W.cols()); }
};

inline constexpr double kRankTolerance = 1e-12;

inline WhiteningMap whitening_from_eigenpairs(const Eigen::VectorXd& values, const Eigen::MatrixXd& vectors,
                                              const Eigen::VectorXd& diagonal) {
  const auto K = values.size();
  require(values(0) > 0.0 && values(K - 1) > kRankTolerance * values(0), ErrorCode::RankDeficient,
          "K-th eigenvalue of the second moment is not positive");
  WhiteningMap w;
  w.W = vectors * values.cwiseSqrt().cwiseInverse().asDiagonal();
  w.eigenvalues = values;
  w.completed_diagonal = diagonal;
  return w;
}

/// W = U_K D_K^{-1/2} from the top-K eigenpairs, so W^T M W = I_K.
inline WhiteningMap compute_whitening(const Eigen::MatrixXd& M, int K) {
  require(M.rows() == M.cols(), ErrorCode::DimensionMismatch, "second moment must be square");
  require(K >= 1 && K <= M.rows(), ErrorCode::InvalidArgument, "need 1 <= K <= p");
  auto eig = detail::top_eigenpairs_dense(M, K);
  detail::fix_signs(eig.vectors);
  return whitening_from_eigenpairs(eig.values, eig.vectors, M.diagonal());
}

inline WhiteningMap compute_whitening(const SecondMomentCompletion& c) {
  return whitening_from_eigenpairs(c.top_values, c.top_vectors, c.completed.diagonal());
}

// ---------------------------------------------------------------------------
// Symmetric K x K x K tensor
// ---------------------------------------------------------------------------

class WhitenedTensor {
 public:
  WhitenedTensor() = default;
  explicit WhitenedTensor(int K) : K_(K), data_(static_cast<std::size_t>(K) * K * K, 0.0) {}

  int K() const { return K_; }
  double operator()(int a, int b, int c) const { return data_[index(a, b, c)]; }

  /// Writes v to all index permutations of (a, b, c).
  void set_symmetric(int a, int b, int c, double v) {
    data_[index(a, b, c)] = v;
    data_[index(a, c, b)] = v;
    data_[index(b, a, c)] = v;
    data_[index(b, c, a)] = v;
    data_[index(c, a, b)] = v;
    data_[index(c, b, a)] = v;
  }

  /// T(I, v, v)
  Eigen::VectorXd contract2(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(K_);
    for (int a = 0; a < K_; ++a) {
      double s = 0.0;
      for (int b = 0; b < K_; ++b) {
        double t = 0.0;
        for (int c = 0; c < K_; ++c) t += data_[index(a, b, c)] * v(c);
        s += t * v(b);
      }
      out(a) = s;
    }
    return out;
  }

  /// T(v, v, v)
  double contract3(const Eigen::VectorXd& v) const { return v.dot(contract2(v)); }

  /// T <- T - lambda v (x) v (x) v, keeping exact symmetry.
  void deflate(double lambda, const Eigen::VectorXd& v) {
    for (int a = 0; a < K_; ++a)
      for (int b = a; b < K_; ++b)
        for (int c = b; c < K_; ++c) set_symmetric(a, b, c, (*this)(a, b, c) - lambda * v(a) * v(b) * v(c));
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (double x : data_) s += x * x;
    return std::sqrt(s);
  }

  bool is_exactly_symmetric() const {
    for (int a = 0; a < K_; ++a)
      for (int b = 0; b < K_; ++b)
        for (int c = 0; c < K_; ++c) {
          const double v = (*this)(a, b, c);
          if (v != (*this)(a, c, b) || v != (*this)(b, a, c) || v != (*this)(b, c, a) || v != (*this)(c, a, b) ||
              v != (*this)(c, b, a))
            return false;
        }
    return true;
  }

  /// sum_z w_z v_z (x) v_z (x) v_z for the columns of V.
  static WhitenedTensor from_components(const Eigen::VectorXd& w, const Eigen::MatrixXd& V) {
    const int K = static_cast<int>(V.rows());
    WhitenedTensor T(K);
    for (int a = 0; a < K; ++a)
      for (int b = a; b < K; ++b)
        for (int c = b; c < K; ++c) {
          double s = 0.0;
          for (Eigen::Index z = 0; z < V.cols(); ++z) s += w(z) * V(a, z) * V(b, z) * V(c, z);
          T.set_symmetric(a, b, c, s);
        }
    return T;
  }

 private:
  std::size_t index(int a, int b, int c) const {
    return (static_cast<std::size_t>(a) * K_ + b) * K_ + c;
  }

  int K_ = 0;
  std::vector<double> data_;
};

/// Empirical whitened third moment with every repeated-index term removed:
/// T = (1/n) sum_k [u (x) u (x) u - sym(P_k (x) u) + 2 Q_k], u = W^T x_k,
/// P_k = sum_i w_i w_i^T x_ik^2, Q_k = sum_i w_i (x) w_i (x) w_i x_ik^3.
inline WhitenedTensor whitened_third_moment(const Eigen::MatrixXd& X, const WhiteningMap& wm) {
  require(X.cols() == wm.p(), ErrorCode::DimensionMismatch, "X columns must match whitening rows");
  const int K = wm.K();
  const double n = static_cast<double>(X.rows());
  const Eigen::MatrixXd& W = wm.W;
  const Eigen::MatrixXd U = X * W;                                   // n x K
  const Eigen::MatrixXd G = X.array().square().matrix().transpose() * U;  // p x K
  const Eigen::VectorXd s3 = X.array().cube().colwise().sum().transpose();

  auto pair_term = [&](int a, int b, int c) { return (W.col(a).cwiseProduct(W.col(b))).dot(G.col(c)); };

  WhitenedTensor T(K);
  for (int a = 0; a < K; ++a)
    for (int b = a; b < K; ++b)
      for (int c = b; c < K; ++c) {
        const double full = (U.col(a).cwiseProduct(U.col(b))).dot(U.col(c));
        const double pairs = pair_term(a, b, c) + pair_term(b, c, a) + pair_term(a, c, b);
        const double diag = (W.col(a).cwiseProduct(W.col(b)).cwiseProduct(W.col(c))).dot(s3);
        T.set_symmetric(a, b, c, (full - pairs + 2.0 * diag) / n);
      }
  return T;
}

// ---------------------------------------------------------------------------
// Robust tensor power method
// ---------------------------------------------------------------------------

struct PowerOptions {
  int restarts = 30;
  int iters = 100;
  double tol = 1e-8;
  SimSeed seed{0x5EED, 0};
};

struct EigenPair {
  double lambda = 0.0;
  Eigen::VectorXd v;
};

struct PowerDecomposition {
  std::vector<EigenPair> pairs;
  double residual = 0.0;  // Frobenius norm of the fully deflated tensor
};

namespace detail {

inline Eigen::VectorXd power_iterate(const WhitenedTensor& T, Eigen::VectorXd v, int iters, double tol) {
  for (int t = 0; t < iters; ++t) {
    Eigen::VectorXd next = T.contract2(v);
    const double nrm = next.norm();
    if (nrm == 0.0) break;
    next /= nrm;
    const double step = std::min((next - v).norm(), (next + v).norm());
    v = std::move(next);
    if (step < tol * 1e-4) break;
  }
  return v;
}

}  // namespace detail

/// Deflation-based power method: for each component, `restarts` random unit
/// starts are iterated and the one with the largest T(v, v, v) is refined
/// further and removed. Ties go to the lowest restart index.
inline PowerDecomposition tensor_power_decompose(WhitenedTensor T, int K, const PowerOptions& opts = {}) {
  require(K >= 1 && K <= T.K(), ErrorCode::InvalidArgument, "need 1 <= K <= tensor dimension");
  require(opts.restarts >= 1 && opts.iters >= 1, ErrorCode::InvalidArgument, "restarts and iters must be >= 1");
  const int dim = T.K();
  PowerDecomposition out;
  for (int comp = 0; comp < K; ++comp) {
    Rng rng(opts.seed.child(static_cast<std::uint64_t>(comp)));
    double best_lambda = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd best;
    for (int r = 0; r < opts.restarts; ++r) {
      Eigen::VectorXd v(dim);
      for (int a = 0; a < dim; ++a) v(a) = rng.normal();
      v.normalize();
      v = detail::power_iterate(T, v, opts.iters, opts.tol);
      double lambda = T.contract3(v);
      if (lambda < 0.0) {
        v = -v;
        lambda = -lambda;
      }
      if (lambda > best_lambda) {
        best_lambda = lambda;
        best = v;
      }
    }
    Eigen::VectorXd v = detail::power_iterate(T, best, opts.iters, opts.tol);
    double lambda = T.contract3(v);
    if (lambda < 0.0) {
      v = -v;
      lambda = -lambda;
    }
    if (!(lambda > opts.tol))
      throw Error(ErrorCode::NonPositiveEigenvalue,
                  "component " + std::to_string(comp + 1) + " has eigenvalue " + std::to_string(lambda));
    T.deflate(lambda, v);
    out.pairs.push_back({lambda, std::move(v)});
  }
  out.residual = T.frobenius_norm();
  return out;
}

// ---------------------------------------------------------------------------
// Component recovery
// ---------------------------------------------------------------------------

struct ComponentEstimate {
  Eigen::MatrixXd whitened_means;  // K x K, column z = lambda_z v_z
  Eigen::MatrixXd raw_means;       // p x K
  Eigen::VectorXd weights;         // lambda^-2, renormalized
  Eigen::VectorXd lambdas;
  double raw_weight_sum = 1.0;     // sum of lambda^-2 before renormalization
  double power_residual = 0.0;
  WhiteningMap whitening;
  int completion_iterations = 0;
  bool completion_converged = true;

  int K() const { return static_cast<int>(raw_means.cols()); }
  int p() const { return static_cast<int>(raw_means.rows()); }
};

/// pi_z = lambda_z^-2 (renormalized), whitened mean lambda_z v_z and raw mean
/// M W (lambda_z v_z) = W diag(eigenvalues) (lambda_z v_z).
inline ComponentEstimate recover_components(const PowerDecomposition& dec, const WhiteningMap& wm) {
  const int K = static_cast<int>(dec.pairs.size());
  require(K == wm.K(), ErrorCode::DimensionMismatch, "number of pairs must equal whitening rank");
  ComponentEstimate est;
  est.whitened_means.resize(K, K);
  est.weights.resize(K);
  est.lambdas.resize(K);
  for (int z = 0; z < K; ++z) {
    const auto& pr = dec.pairs[z];
    require(pr.lambda > 0.0, ErrorCode::NonPositiveEigenvalue, "eigenvalues must be positive");
    require(pr.v.size() == K, ErrorCode::DimensionMismatch, "eigenvector length must equal K");
    est.lambdas(z) = pr.lambda;
    est.weights(z) = 1.0 / (pr.lambda * pr.lambda);
    est.whitened_means.col(z) = pr.lambda * pr.v;
  }
  est.raw_weight_sum = est.weights.sum();
  est.weights /= est.raw_weight_sum;
  est.raw_means = wm.W * wm.eigenvalues.asDiagonal() * est.whitened_means;
  est.power_residual = dec.residual;
  est.whitening = wm;
  return est;
}

struct SpectralOptions {
  CompletionOptions completion;
  PowerOptions power;
};

/// One-call estimation of class means and weights from unlabeled covariates.
inline ComponentEstimate estimate_means(const Eigen::MatrixXd& X, int K, const SpectralOptions& opts = {}) {
  require(K >= 1, ErrorCode::InvalidArgument, "K must be >= 1");
  require(X.rows() >= K, ErrorCode::RankDeficient, "fewer samples than classes");
  require(X.allFinite(), ErrorCode::InvalidArgument, "X has non-finite entries");
  if (K == 1) {
    ComponentEstimate est;
    est.raw_means = X.colwise().mean().transpose();
    est.weights = Eigen::VectorXd::Ones(1);
    est.lambdas = Eigen::VectorXd::Ones(1);
    const double nrm2 = est.raw_means.squaredNorm();
    if (nrm2 > 0.0) {
      // Rank-one whitening along the mean direction.
      est.whitening.W = est.raw_means / nrm2;
      est.whitening.eigenvalues = Eigen::VectorXd::Constant(1, nrm2);
    } else {
      est.whitening.W = Eigen::MatrixXd::Zero(X.cols(), 1);
      est.whitening.eigenvalues = Eigen::VectorXd::Zero(1);
    }
    est.whitening.completed_diagonal = est.raw_means.array().square();
    est.whitened_means = est.whitening.W.transpose() * est.raw_means;
    return est;
  }
  const auto completion = offdiag_second_moment(X, K, opts.completion);
  const auto wm = compute_whitening(completion);
  const auto T = whitened_third_moment(X, wm);
  const auto dec = tensor_power_decompose(T, K, opts.power);
  auto est = recover_components(dec, wm);
  est.completion_iterations = completion.iterations;
  est.completion_converged = completion.converged;
  return est;
}

// ---------------------------------------------------------------------------
// Population moments (test oracle)
// ---------------------------------------------------------------------------

/// Exact moments of the first p coordinates of a mixture.
struct PopulationMoments {
  Eigen::VectorXd weights;
  Eigen::MatrixXd means;      // p x K
  Eigen::MatrixXd variances;  // p x K

  PopulationMoments(const MixtureSpec& spec, int p)
      : weights(spec.weights), means(spec.means.topRows(p)), variances(spec.variances.topRows(p)) {}

  int p() const { return static_cast<int>(means.rows()); }

  /// sum_z pi_z mu(z) mu(z)^T including the diagonal.
  Eigen::MatrixXd second_moment_lowrank() const { return means * weights.asDiagonal() * means.transpose(); }

  Eigen::MatrixXd m2_offdiag() const {
    Eigen::MatrixXd M = second_moment_lowrank();
    M.diagonal().setZero();
    return M;
  }

  /// Column i is a_i = sum_z pi_z sigma^2_i(z) mu(z).
  Eigen::MatrixXd a_vectors() const {
    Eigen::MatrixXd A(p(), p());
    for (int i = 0; i < p(); ++i) {
      Eigen::VectorXd wi = weights.cwiseProduct(variances.row(i).transpose());
      A.col(i) = means * wi;
    }
    return A;
  }

  double m3_distinct(int i, int j, int l) const {
    double s = 0.0;
    for (Eigen::Index z = 0; z < means.cols(); ++z) s += weights(z) * means(i, z) * means(j, z) * means(l, z);
    return s;
  }

  /// sum_z pi_z (W^T mu(z))^{(x)3}, i.e. E[X (x) X (x) X] - G whitened.
  WhitenedTensor whitened_m3(const Eigen::MatrixXd& W) const {
    return WhitenedTensor::from_components(weights, W.transpose() * means);
  }
};

}  // namespace substadj
