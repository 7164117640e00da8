#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "substadj/core_model.hpp"
#include "substadj/error.hpp"
#include "substadj/rng.hpp"

namespace substadj {

/// Means i.i.d. Uniform(-1, 1) times mu_scale, unit variances, uniform class
/// weights. The unit draws depend only on the seed, so specs drawn with the
/// same seed at different scales are exact rescalings of each other.
inline MixtureSpec draw_mixture_spec(int K, int p_max, double mu_scale, SimSeed seed,
                                     Family family = Family::Gaussian) {
  require(K >= 1, ErrorCode::InvalidArgument, "K must be >= 1");
  require(p_max >= 1, ErrorCode::InvalidArgument, "p_max must be >= 1");
  require(mu_scale > 0.0 && std::isfinite(mu_scale), ErrorCode::InvalidArgument, "mu_scale must be positive");
  Rng rng(seed);
  MixtureSpec spec;
  spec.K = K;
  spec.family = family;
  spec.weights = Eigen::VectorXd::Constant(K, 1.0 / K);
  spec.means.resize(p_max, K);
  for (int i = 0; i < p_max; ++i)
    for (int z = 0; z < K; ++z) spec.means(i, z) = mu_scale * rng.uniform(-1.0, 1.0);
  spec.variances = Eigen::MatrixXd::Ones(p_max, K);
  return spec;
}

/// beta_i i.i.d. Uniform(-1, 1), gamma_z = gamma_scale * z, unit noise.
inline OutcomeSpec draw_outcome_spec(int K, int p_max, double gamma_scale, SimSeed seed,
                                     double noise_sd = 1.0) {
  require(K >= 1 && p_max >= 1, ErrorCode::InvalidArgument, "K and p_max must be >= 1");
  Rng rng(seed);
  OutcomeSpec out;
  out.coefficients.resize(p_max);
  for (int i = 0; i < p_max; ++i) out.coefficients(i) = rng.uniform(-1.0, 1.0);
  out.class_offsets.resize(K);
  for (int z = 1; z <= K; ++z) out.class_offsets(z - 1) = gamma_scale * z;
  out.noise_sd = noise_sd;
  return out;
}

namespace detail {

inline int draw_label(Rng& rng, const Eigen::VectorXd& weights) {
  const double u = rng.uniform01() * weights.sum();
  double acc = 0.0;
  for (int z = 0; z < weights.size(); ++z) {
    acc += weights(z);
    if (u < acc) return z + 1;
  }
  return static_cast<int>(weights.size());
}

inline double draw_coordinate(Rng& rng, Family family, double mean, double var) {
  switch (family) {
    case Family::Gaussian: return rng.normal(mean, std::sqrt(var));
    case Family::Laplace: return rng.laplace(mean, std::sqrt(var / 2.0));
    case Family::Uniform: {
      const double half = std::sqrt(3.0 * var);
      return rng.uniform(mean - half, mean + half);
    }
  }
  return mean;
}

}  // namespace detail

/// Draws n observations of (X_{1:p}, Z). Labels are drawn first, then the
/// covariates row by row, so the label sequence is shared by any two calls
/// with the same seed and weights.
inline LabeledDataset simulate_covariates(const MixtureSpec& spec, int n, int p, SimSeed seed) {
  require(n >= 1, ErrorCode::InvalidArgument, "n must be >= 1");
  require(p >= 1 && p <= spec.p_max(), ErrorCode::InvalidArgument, "p must lie in [1, p_max]");
  Rng rng(seed);
  Labels z(n);
  for (int k = 0; k < n; ++k) z[k] = detail::draw_label(rng, spec.weights);
  LabeledDataset data;
  data.X.resize(n, p);
  for (int k = 0; k < n; ++k) {
    const int c = z[k] - 1;
    for (int i = 0; i < p; ++i)
      data.X(k, i) = detail::draw_coordinate(rng, spec.family, spec.means(i, c), spec.variances(i, c));
  }
  data.z_true = std::move(z);
  return data;
}

/// y_k = sum_i beta_i x_{i,k} + gamma_{z_k} + eps_k over all p_max coordinates.
inline LabeledDataset simulate_outcomes(LabeledDataset data, const MixtureSpec& spec,
                                        const OutcomeSpec& outcome, SimSeed seed) {
  require(data.z_true.has_value(), ErrorCode::MissingLabels, "simulate_outcomes needs z_true");
  require(data.X.cols() == spec.p_max() && outcome.coefficients.size() == spec.p_max(),
          ErrorCode::DimensionMismatch, "outcome needs all p_max covariates");
  require(outcome.class_offsets.size() == spec.K, ErrorCode::DimensionMismatch, "class_offsets must have length K");
  require(static_cast<Eigen::Index>(data.z_true->size()) == data.X.rows(), ErrorCode::DimensionMismatch,
          "z_true length must equal n");
  Rng rng(seed);
  Eigen::VectorXd y = data.X * outcome.coefficients;
  for (int k = 0; k < data.n(); ++k) {
    const int z = (*data.z_true)[k];
    require(z >= 1 && z <= spec.K, ErrorCode::InvalidArgument, "label outside {1..K}");
    y(k) += outcome.class_offsets(z - 1) + outcome.noise_sd * rng.normal();
  }
  data.y = std::move(y);
  return data;
}

}  // namespace substadj
