#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "substadj/error.hpp"

namespace substadj {

/// Class labels are 1-based, taking values in {1..K}.
using Labels = std::vector<int>;

enum class Family { Gaussian, Laplace, Uniform };

inline std::string_view to_string(Family f) {
  switch (f) {
    case Family::Gaussian: return "gaussian";
    case Family::Laplace: return "laplace";
    case Family::Uniform: return "uniform";
  }
  return "gaussian";
}

inline Family parse_family(std::string_view s) {
  if (s == "gaussian") return Family::Gaussian;
  if (s == "laplace") return Family::Laplace;
  if (s == "uniform") return Family::Uniform;
  throw Error(ErrorCode::ParseError, "unknown family '" + std::string(s) + "'");
}

/// Finite mixture with conditionally independent coordinates.
/// means(i, z) = mu_i(z), variances(i, z) = sigma^2_i(z), both p_max x K.
struct MixtureSpec {
  int K = 1;
  Eigen::VectorXd weights;
  Eigen::MatrixXd means;
  Eigen::MatrixXd variances;
  Family family = Family::Gaussian;

  int p_max() const { return static_cast<int>(means.rows()); }
};

/// Linear outcome Y = sum_i beta_i X_i + gamma_Z + eps, eps ~ N(0, noise_sd^2).
struct OutcomeSpec {
  Eigen::VectorXd coefficients;
  Eigen::VectorXd class_offsets;
  double noise_sd = 1.0;
};

struct LabeledDataset {
  Eigen::MatrixXd X;
  std::optional<Eigen::VectorXd> y;
  std::optional<Labels> z_true;
  std::optional<Labels> z_sub;

  int n() const { return static_cast<int>(X.rows()); }
  int p() const { return static_cast<int>(X.cols()); }
};

struct Violation {
  std::string field;
  std::string condition;
};

inline constexpr double kWeightSumTolerance = 1e-12;

/// Checks the testable parts of the mixture assumptions. Violations are data.
inline std::vector<Violation> validate_spec(const MixtureSpec& spec) {
  std::vector<Violation> out;
  if (spec.K < 1) out.push_back({"K", "K must be >= 1"});
  if (spec.means.rows() < 1) out.push_back({"means", "p_max must be >= 1"});
  if (spec.weights.size() != spec.K) out.push_back({"weights", "length must equal K"});
  if (spec.means.cols() != spec.K) out.push_back({"means", "column count must equal K"});
  if (spec.variances.rows() != spec.means.rows() || spec.variances.cols() != spec.means.cols())
    out.push_back({"variances", "shape must match means"});

  if (!spec.weights.allFinite()) {
    out.push_back({"weights", "non-finite entry"});
  } else if (spec.weights.size() > 0) {
    if ((spec.weights.array() <= 0.0).any()) out.push_back({"weights", "weights not strictly positive"});
    if (std::abs(spec.weights.sum() - 1.0) > kWeightSumTolerance) out.push_back({"weights", "weights sum != 1"});
  }
  if (!spec.means.allFinite()) out.push_back({"means", "non-finite entry"});
  if (!spec.variances.allFinite()) {
    out.push_back({"variances", "non-finite entry"});
  } else if (spec.variances.size() > 0 && (spec.variances.array() <= 0.0).any()) {
    out.push_back({"variances", "variance not positive"});
  }
  return out;
}

/// Renormalizes weights to sum to one. Only ever applied on explicit request.
inline MixtureSpec normalized_weights(MixtureSpec spec) {
  const double s = spec.weights.sum();
  require(s > 0.0, ErrorCode::InvalidArgument, "weights must have positive sum");
  spec.weights /= s;
  return spec;
}

inline std::vector<Violation> validate_outcome(const MixtureSpec& spec, const OutcomeSpec& outcome) {
  std::vector<Violation> out;
  if (outcome.coefficients.size() != spec.p_max())
    out.push_back({"coefficients", "length must equal p_max"});
  if (outcome.class_offsets.size() != spec.K) out.push_back({"class_offsets", "length must equal K"});
  if (!(outcome.noise_sd > 0.0) || !std::isfinite(outcome.noise_sd))
    out.push_back({"noise_sd", "noise_sd must be positive"});
  if (!outcome.coefficients.allFinite() || !outcome.class_offsets.allFinite())
    out.push_back({"coefficients", "non-finite entry"});
  return out;
}

inline std::vector<Violation> validate_dataset(const LabeledDataset& data, int K) {
  std::vector<Violation> out;
  const auto n = data.X.rows();
  if (!data.X.allFinite()) out.push_back({"X", "non-finite entry"});
  if (data.y) {
    if (data.y->size() != n) out.push_back({"y", "length must equal n"});
    if (!data.y->allFinite()) out.push_back({"y", "non-finite entry"});
  }
  auto check_labels = [&](const std::optional<Labels>& labels, const char* name) {
    if (!labels) return;
    if (static_cast<Eigen::Index>(labels->size()) != n) out.push_back({name, "length must equal n"});
    for (int z : *labels) {
      if (z < 1 || z > K) {
        out.push_back({name, "label outside {1..K}"});
        break;
      }
    }
  };
  check_labels(data.z_true, "z_true");
  check_labels(data.z_sub, "z_sub");
  return out;
}

/// Target coefficients for the homogeneous partially linear outcome model:
/// the adjusted-regression target coincides with the simulation coefficient.
inline Eigen::VectorXd population_beta(const MixtureSpec& spec, const OutcomeSpec& outcome, int p) {
  require(p >= 1 && p <= outcome.coefficients.size(), ErrorCode::InvalidArgument,
          "p must lie in [1, len(coefficients)]");
  (void)spec;
  return outcome.coefficients.head(p);
}

inline Eigen::VectorXd population_beta(const MixtureSpec& spec, const OutcomeSpec& outcome) {
  return population_beta(spec, outcome, static_cast<int>(outcome.coefficients.size()));
}

/// Heterogeneous slopes: beta_i = sum_z pi_z w_i(z) slope(z) with
/// w_i(z) = sigma^2_i(z) / sum_v pi_v sigma^2_i(v). For binary X_i pass
/// sigma^2_i(z) = pi_i(z)(1 - pi_i(z)).
inline double population_beta_heterogeneous(const Eigen::VectorXd& weights,
                                            const Eigen::VectorXd& variances,
                                            const Eigen::VectorXd& slopes) {
  require(weights.size() == variances.size() && weights.size() == slopes.size(),
          ErrorCode::DimensionMismatch, "weights, variances and slopes must have equal length");
  const double mean_var = weights.dot(variances);
  require(mean_var > 0.0, ErrorCode::ZeroConditionalVariance, "E[Var[X_i | Z]] must be positive");
  return weights.cwiseProduct(variances).dot(slopes) / mean_var;
}

}  // namespace substadj
