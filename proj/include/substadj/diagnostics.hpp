#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string_view>
#include <vector>

#include "substadj/core_model.hpp"
#include "substadj/error.hpp"
#include "substadj/rng.hpp"
#include "substadj/simulate.hpp"

namespace substadj {

// ---------------------------------------------------------------------------
// Separation and relative errors
// ---------------------------------------------------------------------------

struct SeparationReport {
  double sep_p = 0.0;
  Eigen::MatrixXd pairwise_sq_dists;  // K x K, zero diagonal
  double strong_sep_slope = 0.0;      // sep_p / p
};

inline SeparationReport separation(const Eigen::MatrixXd& means) {
  const auto K = means.cols();
  require(K >= 2, ErrorCode::InvalidArgument, "separation needs K >= 2");
  SeparationReport r;
  r.pairwise_sq_dists = Eigen::MatrixXd::Zero(K, K);
  r.sep_p = std::numeric_limits<double>::infinity();
  for (Eigen::Index z = 0; z < K; ++z)
    for (Eigen::Index v = z + 1; v < K; ++v) {
      const double d = (means.col(z) - means.col(v)).squaredNorm();
      r.pairwise_sq_dists(z, v) = r.pairwise_sq_dists(v, z) = d;
      r.sep_p = std::min(r.sep_p, d);
    }
  r.strong_sep_slope = r.sep_p / static_cast<double>(means.rows());
  return r;
}

struct RelativeErrorReport {
  Eigen::MatrixXd R;  // R(z, v) = ||mu(z) - mu_hat(z)|| / ||mu(z) - mu(v)||, zero diagonal
  double max_offdiag = 0.0;
  bool within_tenth = true;
};

inline RelativeErrorReport relative_errors(const Eigen::MatrixXd& means_true, const Eigen::MatrixXd& means_est,
                                           double threshold = 0.1) {
  require(means_true.rows() == means_est.rows() && means_true.cols() == means_est.cols(),
          ErrorCode::DimensionMismatch, "mean matrices differ in shape");
  const auto K = means_true.cols();
  RelativeErrorReport r;
  r.R = Eigen::MatrixXd::Zero(K, K);
  for (Eigen::Index z = 0; z < K; ++z) {
    const double err = (means_true.col(z) - means_est.col(z)).norm();
    for (Eigen::Index v = 0; v < K; ++v) {
      if (v == z) continue;
      const double gap = (means_true.col(z) - means_true.col(v)).norm();
      require(gap > 0.0, ErrorCode::CoincidentMeans, "true means of two classes coincide");
      r.R(z, v) = err / gap;
      r.max_offdiag = std::max(r.max_offdiag, r.R(z, v));
    }
  }
  r.within_tenth = r.max_offdiag <= threshold;
  return r;
}

// ---------------------------------------------------------------------------
// Mislabeling bounds
// ---------------------------------------------------------------------------

/// Constants of the Chebyshev and sub-Gaussian mislabeling bounds for a
/// relative-error threshold r < 1/4. At r = 1/10 they are 25 and 50.
inline std::pair<double, double> mislabel_constants(double threshold = 0.1) {
  require(threshold > 0.0 && threshold < 0.25, ErrorCode::InvalidArgument, "threshold must lie in (0, 1/4)");
  if (threshold == 0.1) return {25.0, 50.0};
  const double margin = 0.5 * (1.0 - 2.0 * threshold) * (1.0 - 4.0 * threshold);
  const double cheb = std::pow((1.0 + 2.0 * threshold) / margin, 2);
  return {cheb, 2.0 * cheb};
}

struct MislabelBounds {
  double chebyshev = 1.0;
  std::optional<double> subgaussian;
  Eigen::MatrixXd pairwise;  // per-pair Chebyshev bound on P(Zhat = v | Z = z)
};

/// P(Zhat != Z) <= C K sigma2_max / sep_p and <= K exp(-sep_p / (2C v_max)),
/// all capped at 1.
inline MislabelBounds mislabel_bounds(int K, double sigma2_max, const SeparationReport& sep,
                                      std::optional<double> v_max = std::nullopt, double threshold = 0.1) {
  require(sep.sep_p > 0.0, ErrorCode::InvalidArgument, "sep_p must be positive");
  require(K >= 1 && sigma2_max > 0.0, ErrorCode::InvalidArgument, "K and sigma2_max must be positive");
  const auto [c_cheb, c_sg] = mislabel_constants(threshold);
  MislabelBounds b;
  b.chebyshev = std::min(1.0, c_cheb * K * sigma2_max / sep.sep_p);
  if (v_max) {
    require(*v_max > 0.0, ErrorCode::InvalidArgument, "v_max must be positive");
    b.subgaussian = std::min(1.0, K * std::exp(-sep.sep_p / (c_sg * *v_max)));
  }
  const auto Kp = sep.pairwise_sq_dists.rows();
  b.pairwise = Eigen::MatrixXd::Zero(Kp, Kp);
  for (Eigen::Index z = 0; z < Kp; ++z)
    for (Eigen::Index v = 0; v < Kp; ++v)
      if (z != v) b.pairwise(z, v) = std::min(1.0, c_cheb * sigma2_max / sep.pairwise_sq_dists(z, v));
  return b;
}

inline MislabelBounds mislabel_bounds(int K, double sigma2_max, double sep_p,
                                      std::optional<double> v_max = std::nullopt, double threshold = 0.1) {
  SeparationReport sep;
  sep.sep_p = sep_p;
  return mislabel_bounds(K, sigma2_max, sep, v_max, threshold);
}

/// Variance factor v with E exp(t(X - mu)) <= exp(v t^2 / 2) for every
/// coordinate and class over the first p coordinates. Laplace has none.
inline std::optional<double> subgaussian_variance_factor(const MixtureSpec& spec, int p) {
  require(p >= 1 && p <= spec.p_max(), ErrorCode::InvalidArgument, "p must lie in [1, p_max]");
  const double s2 = spec.variances.topRows(p).maxCoeff();
  switch (spec.family) {
    case Family::Gaussian: return s2;
    case Family::Uniform: return 3.0 * s2;  // (b - a)^2 / 4 with b - a = 2 sqrt(3 s2)
    case Family::Laplace: return std::nullopt;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Gaussian recoverability
// ---------------------------------------------------------------------------

/// Overlap integral of N(mu1, s1sq) and N(mu2, s2sq).
inline double bhattacharyya_gaussian(double mu1, double s1sq, double mu2, double s2sq) {
  require(s1sq > 0.0 && s2sq > 0.0, ErrorCode::InvalidArgument, "variances must be positive");
  const double sum = s1sq + s2sq;
  const double d = mu1 - mu2;
  return std::sqrt(2.0 * std::sqrt(s1sq * s2sq) / sum) * std::exp(-d * d / (4.0 * sum));
}

/// Per-coordinate terms of the two Kakutani series.
inline double kakutani_mean_term(double mu1, double s1sq, double mu2, double s2sq) {
  const double d = mu1 - mu2;
  return d * d / (s1sq + s2sq);
}

inline double kakutani_var_term(double s1sq, double s2sq) {
  return std::log((s1sq + s2sq) / (2.0 * std::sqrt(s1sq * s2sq)));
}

enum class Verdict { Recoverable, NotRecoverable, Inconclusive };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Recoverable: return "Recoverable";
    case Verdict::NotRecoverable: return "NotRecoverable";
    case Verdict::Inconclusive: return "Inconclusive";
  }
  return "Inconclusive";
}

struct KakutaniOptions {
  double divergence_threshold = 10.0;  // partial sum a divergent series must reach
  double zero_increment = 1e-12;       // tail increments below this count as zero
  double summable_exponent = 1.25;     // fitted decay exponent above this counts as summable
  int tail_bins = 8;
};

struct SeriesEvidence {
  double tail_exponent = 0.0;  // fitted d_i ~ i^{-s}; +inf for a zero tail
  double tail_slope = 0.0;     // mean increment over the last half
  bool converged = false;
  bool diverging = false;
};

struct KakutaniReport {
  std::vector<double> mean_series_partial;
  std::vector<double> var_series_partial;
  std::vector<double> bc_products;
  SeriesEvidence mean_evidence;
  SeriesEvidence var_evidence;
  Verdict verdict = Verdict::Inconclusive;
};

namespace detail {

/// Fits log(bin mean increment) against log(bin centre) over geometric bins
/// of the last half of the increments.
inline SeriesEvidence series_evidence(const std::vector<double>& partial, const KakutaniOptions& opts) {
  SeriesEvidence e;
  const std::size_t p = partial.size();
  if (p == 0) {
    e.converged = true;
    e.tail_exponent = std::numeric_limits<double>::infinity();
    return e;
  }
  const std::size_t lo = p / 2;  // increments with 0-based index >= lo
  std::vector<double> inc(p);
  for (std::size_t i = 0; i < p; ++i) inc[i] = partial[i] - (i ? partial[i - 1] : 0.0);

  double max_tail = 0.0, sum_tail = 0.0;
  for (std::size_t i = lo; i < p; ++i) {
    max_tail = std::max(max_tail, std::abs(inc[i]));
    sum_tail += inc[i];
  }
  e.tail_slope = sum_tail / static_cast<double>(p - lo);
  if (max_tail < opts.zero_increment) {
    e.converged = true;
    e.tail_exponent = std::numeric_limits<double>::infinity();
    return e;
  }

  std::vector<double> xs, ys;
  const double a = std::log(static_cast<double>(lo + 1)), b = std::log(static_cast<double>(p + 1));
  for (int k = 0; k < opts.tail_bins; ++k) {
    const double e0 = std::exp(a + (b - a) * k / opts.tail_bins);
    const double e1 = std::exp(a + (b - a) * (k + 1) / opts.tail_bins);
    double s = 0.0, cnt = 0.0;
    for (std::size_t i = lo; i < p; ++i) {
      const double idx = static_cast<double>(i + 1);
      if (idx >= e0 && idx < e1) {
        s += inc[i];
        cnt += 1.0;
      }
    }
    if (cnt > 0.0 && s > 0.0) {
      xs.push_back(std::log(std::sqrt(e0 * e1)));
      ys.push_back(std::log(s / cnt));
    }
  }
  if (xs.size() >= 2) {
    double mx = 0.0, my = 0.0;
    for (std::size_t j = 0; j < xs.size(); ++j) {
      mx += xs[j];
      my += ys[j];
    }
    mx /= xs.size();
    my /= xs.size();
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t j = 0; j < xs.size(); ++j) {
      sxy += (xs[j] - mx) * (ys[j] - my);
      sxx += (xs[j] - mx) * (xs[j] - mx);
    }
    e.tail_exponent = sxx > 0.0 ? -sxy / sxx : 0.0;
  }
  e.converged = e.tail_exponent > opts.summable_exponent;
  e.diverging = !e.converged && e.tail_slope > 0.0 && e.tail_exponent <= 1.0 &&
                partial.back() >= opts.divergence_threshold;
  return e;
}

}  // namespace detail

/// Partial sums of sum_i (mu_i(z) - mu_i(v))^2 / (s2_i(z) + s2_i(v)) and of
/// sum_i log((s2_i(z) + s2_i(v)) / (2 s_i(z) s_i(v))), with the running
/// product of per-coordinate Bhattacharyya coefficients. Divergence cannot be
/// decided from finitely many terms, so the verdict is a tail-fit heuristic.
inline KakutaniReport kakutani_partial_sums(const Eigen::VectorXd& mu_z, const Eigen::VectorXd& s2_z,
                                            const Eigen::VectorXd& mu_v, const Eigen::VectorXd& s2_v,
                                            const KakutaniOptions& opts = {}) {
  const auto p = mu_z.size();
  require(s2_z.size() == p && mu_v.size() == p && s2_v.size() == p, ErrorCode::DimensionMismatch,
          "series inputs differ in length");
  KakutaniReport r;
  r.mean_series_partial.reserve(p);
  r.var_series_partial.reserve(p);
  r.bc_products.reserve(p);
  double m = 0.0, v = 0.0, log_bc = 0.0;
  for (Eigen::Index i = 0; i < p; ++i) {
    require(s2_z(i) > 0.0 && s2_v(i) > 0.0, ErrorCode::InvalidArgument, "variances must be positive");
    const double mt = kakutani_mean_term(mu_z(i), s2_z(i), mu_v(i), s2_v(i));
    const double vt = kakutani_var_term(s2_z(i), s2_v(i));
    m += mt;
    v += vt;
    log_bc += 0.25 * mt + 0.5 * vt;
    r.mean_series_partial.push_back(m);
    r.var_series_partial.push_back(v);
    r.bc_products.push_back(std::exp(-log_bc));
  }
  r.mean_evidence = detail::series_evidence(r.mean_series_partial, opts);
  r.var_evidence = detail::series_evidence(r.var_series_partial, opts);
  if (r.mean_evidence.diverging || r.var_evidence.diverging)
    r.verdict = Verdict::Recoverable;
  else if (r.mean_evidence.converged && r.var_evidence.converged)
    r.verdict = Verdict::NotRecoverable;
  else
    r.verdict = Verdict::Inconclusive;
  return r;
}

/// Classes z and v (1-based) of a Gaussian mixture over its first p coordinates.
inline KakutaniReport kakutani_partial_sums(const MixtureSpec& spec, int z, int v, int p,
                                            const KakutaniOptions& opts = {}) {
  require(spec.family == Family::Gaussian, ErrorCode::NonGaussianFamily, "closed forms are Gaussian-only");
  require(z >= 1 && z <= spec.K && v >= 1 && v <= spec.K && z != v, ErrorCode::InvalidArgument,
          "need distinct labels in {1..K}");
  require(p >= 1 && p <= spec.p_max(), ErrorCode::InvalidArgument, "p must lie in [1, p_max]");
  return kakutani_partial_sums(spec.means.col(z - 1).head(p), spec.variances.col(z - 1).head(p),
                               spec.means.col(v - 1).head(p), spec.variances.col(v - 1).head(p), opts);
}

// ---------------------------------------------------------------------------
// Monte Carlo mislabeling rate for fixed centres
// ---------------------------------------------------------------------------

struct MonteCarloRate {
  double rate = 0.0;
  double std_error = 0.0;
  long draws = 0;
};

/// Fresh draws of (X_{1:p}, Z) from the mixture, labelled by the nearest of
/// the given centres (p x K). Ties go to the smallest label.
inline MonteCarloRate monte_carlo_mislabel(const MixtureSpec& spec, int p, const Eigen::MatrixXd& centres, long draws,
                                           SimSeed seed) {
  require(p >= 1 && p <= spec.p_max(), ErrorCode::InvalidArgument, "p must lie in [1, p_max]");
  require(centres.rows() == p && centres.cols() == spec.K, ErrorCode::DimensionMismatch, "centres must be p x K");
  require(draws >= 1, ErrorCode::InvalidArgument, "need at least one draw");
  Rng rng(seed);
  const Eigen::VectorXd half_norm2 = 0.5 * centres.colwise().squaredNorm().transpose();
  const long chunk = 1024;
  long wrong = 0;
  Eigen::MatrixXd Xc(p, chunk);
  std::vector<int> zc(chunk);
  for (long start = 0; start < draws; start += chunk) {
    const long m = std::min(chunk, draws - start);
    for (long j = 0; j < m; ++j) {
      const int z = detail::draw_label(rng, spec.weights) - 1;
      zc[j] = z;
      for (int i = 0; i < p; ++i)
        Xc(i, j) = detail::draw_coordinate(rng, spec.family, spec.means(i, z), spec.variances(i, z));
    }
    // argmin ||x - c||^2 = argmax <x, c> - ||c||^2 / 2
    const Eigen::MatrixXd scores = centres.transpose() * Xc.leftCols(m);
    for (long j = 0; j < m; ++j) {
      int best = 0;
      double best_score = scores(0, j) - half_norm2(0);
      for (int c = 1; c < spec.K; ++c) {
        const double s = scores(c, j) - half_norm2(c);
        if (s > best_score) {
          best_score = s;
          best = c;
        }
      }
      wrong += (best != zc[j]);
    }
  }
  MonteCarloRate r;
  r.draws = draws;
  r.rate = static_cast<double>(wrong) / static_cast<double>(draws);
  r.std_error = std::sqrt(std::max(r.rate * (1.0 - r.rate), 0.0) / static_cast<double>(draws));
  return r;
}

}  // namespace substadj
