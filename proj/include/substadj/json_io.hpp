#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <initializer_list>
#include <optional>
#include <string>
#include <utility>

#include "substadj/core_model.hpp"
#include "substadj/diagnostics.hpp"
#include "substadj/error.hpp"
#include "substadj/spectral.hpp"

namespace substadj {

using Json = nlohmann::json;

namespace detail {

/// Nested rows, i.e. row-major.
inline Json matrix_to_json(const Eigen::MatrixXd& M) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json vector_to_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline double number_at(const Json& j, const std::string& what) {
  if (!j.is_number()) throw Error(ErrorCode::ParseError, what + " must be a number");
  return j.get<double>();
}

/// Accepts nested rows or a flat row-major array of rows*cols numbers.
inline Eigen::MatrixXd matrix_from_json(const Json& j, Eigen::Index cols, const std::string& what) {
  if (!j.is_array()) throw Error(ErrorCode::ParseError, what + " must be an array");
  if (cols <= 0) throw Error(ErrorCode::ParseError, what + " needs a positive column count");
  if (!j.empty() && j.front().is_array()) {
    Eigen::MatrixXd M(static_cast<Eigen::Index>(j.size()), cols);
    for (std::size_t r = 0; r < j.size(); ++r) {
      if (!j[r].is_array() || static_cast<Eigen::Index>(j[r].size()) != cols)
        throw Error(ErrorCode::ParseError, what + " row " + std::to_string(r) + " has the wrong length");
      for (Eigen::Index c = 0; c < cols; ++c) M(r, c) = number_at(j[r][c], what);
    }
    return M;
  }
  if (static_cast<Eigen::Index>(j.size()) % cols != 0)
    throw Error(ErrorCode::ParseError, what + " length is not a multiple of " + std::to_string(cols));
  const auto rows = static_cast<Eigen::Index>(j.size()) / cols;
  Eigen::MatrixXd M(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) M(r, c) = number_at(j[r * cols + c], what);
  return M;
}

inline Eigen::VectorXd vector_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw Error(ErrorCode::ParseError, what + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number_at(j[i], what);
  return v;
}

inline void reject_unknown_keys(const Json& j, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw Error(ErrorCode::ParseError, "expected a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || item.key() == a;
    if (!ok) throw Error(ErrorCode::ParseError, "unknown key '" + item.key() + "'");
  }
}

inline const Json& required_key(const Json& j, const std::string& key) {
  if (!j.contains(key)) throw Error(ErrorCode::ParseError, "missing key '" + key + "'");
  return j.at(key);
}

inline int int_at(const Json& j, const std::string& what) {
  if (!j.is_number_integer()) throw Error(ErrorCode::ParseError, what + " must be an integer");
  return j.get<int>();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model document: mixture keys plus optional outcome keys
// ---------------------------------------------------------------------------

inline Json to_json(const MixtureSpec& spec) {
  return Json{{"K", spec.K},
              {"weights", detail::vector_to_json(spec.weights)},
              {"means", detail::matrix_to_json(spec.means)},
              {"variances", detail::matrix_to_json(spec.variances)},
              {"family", std::string(to_string(spec.family))}};
}

inline Json to_json(const OutcomeSpec& o) {
  return Json{{"coefficients", detail::vector_to_json(o.coefficients)},
              {"class_offsets", detail::vector_to_json(o.class_offsets)},
              {"noise_sd", o.noise_sd}};
}

inline Json to_json(const MixtureSpec& spec, const OutcomeSpec& o) {
  Json j = to_json(spec);
  j.update(to_json(o));
  return j;
}

struct ModelDocument {
  MixtureSpec mixture;
  std::optional<OutcomeSpec> outcome;
};

/// Reads K, weights, means, variances, family and, when present together,
/// coefficients, class_offsets, noise_sd. Unknown keys are rejected and the
/// result is validated.
inline ModelDocument model_from_json(const Json& j) {
  detail::reject_unknown_keys(
      j, {"K", "weights", "means", "variances", "family", "coefficients", "class_offsets", "noise_sd"});
  ModelDocument doc;
  auto& s = doc.mixture;
  s.K = detail::int_at(detail::required_key(j, "K"), "K");
  if (s.K < 1) throw Error(ErrorCode::InvalidArgument, "K must be positive");
  s.weights = detail::vector_from_json(detail::required_key(j, "weights"), "weights");
  s.means = detail::matrix_from_json(detail::required_key(j, "means"), s.K, "means");
  s.variances = detail::matrix_from_json(detail::required_key(j, "variances"), s.K, "variances");
  const auto& fam = detail::required_key(j, "family");
  if (!fam.is_string()) throw Error(ErrorCode::ParseError, "family must be a string");
  s.family = parse_family(fam.get<std::string>());
  const auto violations = validate_spec(s);
  if (!violations.empty())
    throw Error(ErrorCode::InvalidArgument, violations.front().field + ": " + violations.front().condition);

  const int outcome_keys = j.contains("coefficients") + j.contains("class_offsets") + j.contains("noise_sd");
  if (outcome_keys == 3) {
    OutcomeSpec o;
    o.coefficients = detail::vector_from_json(j.at("coefficients"), "coefficients");
    o.class_offsets = detail::vector_from_json(j.at("class_offsets"), "class_offsets");
    o.noise_sd = detail::number_at(j.at("noise_sd"), "noise_sd");
    const auto ov = validate_outcome(s, o);
    if (!ov.empty()) throw Error(ErrorCode::InvalidArgument, ov.front().field + ": " + ov.front().condition);
    doc.outcome = std::move(o);
  } else if (outcome_keys != 0) {
    throw Error(ErrorCode::ParseError, "outcome keys must appear together");
  }
  return doc;
}

// ---------------------------------------------------------------------------
// ComponentEstimate
// ---------------------------------------------------------------------------

inline Json to_json(const ComponentEstimate& est) {
  return Json{{"K", est.K()},
              {"p", est.p()},
              {"raw_means", detail::matrix_to_json(est.raw_means)},
              {"whitened_means", detail::matrix_to_json(est.whitened_means)},
              {"weights", detail::vector_to_json(est.weights)},
              {"lambdas", detail::vector_to_json(est.lambdas)},
              {"raw_weight_sum", est.raw_weight_sum},
              {"residual", est.power_residual},
              {"whitening", detail::matrix_to_json(est.whitening.W)},
              {"whitening_eigenvalues", detail::vector_to_json(est.whitening.eigenvalues)},
              {"completion_iterations", est.completion_iterations},
              {"completion_converged", est.completion_converged}};
}

inline ComponentEstimate estimate_from_json(const Json& j) {
  detail::reject_unknown_keys(j, {"K", "p", "raw_means", "whitened_means", "weights", "lambdas", "raw_weight_sum",
                                  "residual", "whitening", "whitening_eigenvalues", "completion_iterations",
                                  "completion_converged"});
  const int K = detail::int_at(detail::required_key(j, "K"), "K");
  const int p = detail::int_at(detail::required_key(j, "p"), "p");
  if (K < 1 || p < 1) throw Error(ErrorCode::ParseError, "K and p must be positive");
  ComponentEstimate est;
  est.raw_means = detail::matrix_from_json(detail::required_key(j, "raw_means"), K, "raw_means");
  est.whitened_means = detail::matrix_from_json(detail::required_key(j, "whitened_means"), K, "whitened_means");
  est.weights = detail::vector_from_json(detail::required_key(j, "weights"), "weights");
  est.lambdas = detail::vector_from_json(detail::required_key(j, "lambdas"), "lambdas");
  est.power_residual = detail::number_at(detail::required_key(j, "residual"), "residual");
  if (j.contains("raw_weight_sum")) est.raw_weight_sum = detail::number_at(j.at("raw_weight_sum"), "raw_weight_sum");
  if (j.contains("whitening")) est.whitening.W = detail::matrix_from_json(j.at("whitening"), K, "whitening");
  if (j.contains("whitening_eigenvalues"))
    est.whitening.eigenvalues = detail::vector_from_json(j.at("whitening_eigenvalues"), "whitening_eigenvalues");
  if (j.contains("completion_iterations"))
    est.completion_iterations = detail::int_at(j.at("completion_iterations"), "completion_iterations");
  if (j.contains("completion_converged")) est.completion_converged = j.at("completion_converged").get<bool>();
  require(est.raw_means.rows() == p, ErrorCode::DimensionMismatch, "raw_means must have p rows");
  require(est.whitened_means.rows() == K, ErrorCode::DimensionMismatch, "whitened_means must be K x K");
  require(est.weights.size() == K && est.lambdas.size() == K, ErrorCode::DimensionMismatch,
          "weights and lambdas must have length K");
  require(est.whitening.W.size() == 0 || est.whitening.W.rows() == p, ErrorCode::DimensionMismatch,
          "whitening must be p x K");
  return est;
}

// ---------------------------------------------------------------------------
// Diagnostics reports
// ---------------------------------------------------------------------------

inline Json to_json(const SeparationReport& r) {
  return Json{{"sep_p", r.sep_p},
              {"strong_sep_slope", r.strong_sep_slope},
              {"pairwise_sq_dists", detail::matrix_to_json(r.pairwise_sq_dists)}};
}

inline Json to_json(const RelativeErrorReport& r) {
  return Json{{"R", detail::matrix_to_json(r.R)}, {"max_offdiag", r.max_offdiag}, {"within_tenth", r.within_tenth}};
}

inline Json to_json(const MislabelBounds& b) {
  Json j{{"chebyshev", b.chebyshev}, {"pairwise", detail::matrix_to_json(b.pairwise)}};
  j["subgaussian"] = b.subgaussian ? Json(*b.subgaussian) : Json(nullptr);
  return j;
}

inline Json to_json(const KakutaniReport& r) {
  auto evidence = [](const SeriesEvidence& e) {
    return Json{{"tail_exponent", std::isfinite(e.tail_exponent) ? Json(e.tail_exponent) : Json("inf")},
                {"tail_slope", e.tail_slope},
                {"converged", e.converged},
                {"diverging", e.diverging}};
  };
  const bool empty = r.mean_series_partial.empty();
  return Json{{"verdict", std::string(to_string(r.verdict))},
              {"p", r.mean_series_partial.size()},
              {"mean_partial", empty ? 0.0 : r.mean_series_partial.back()},
              {"var_partial", empty ? 0.0 : r.var_series_partial.back()},
              {"bc_product", empty ? 1.0 : r.bc_products.back()},
              {"mean_evidence", evidence(r.mean_evidence)},
              {"var_evidence", evidence(r.var_evidence)}};
}

}  // namespace substadj
