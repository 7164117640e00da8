#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace substadj {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  LengthMismatch,
  MissingLabels,
  ZeroConditionalVariance,
  ZeroResidualVariance,
  ZeroNorm,
  RankDeficient,
  NonPositiveEigenvalue,
  ConvergenceFailure,
  DegenerateInputs,
  CoincidentMeans,
  NonGaussianFamily,
  SingularSystem,
  ParseError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::MissingLabels: return "MissingLabels";
    case ErrorCode::ZeroConditionalVariance: return "ZeroConditionalVariance";
    case ErrorCode::ZeroResidualVariance: return "ZeroResidualVariance";
    case ErrorCode::ZeroNorm: return "ZeroNorm";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NonPositiveEigenvalue: return "NonPositiveEigenvalue";
    case ErrorCode::ConvergenceFailure: return "ConvergenceFailure";
    case ErrorCode::DegenerateInputs: return "DegenerateInputs";
    case ErrorCode::CoincidentMeans: return "CoincidentMeans";
    case ErrorCode::NonGaussianFamily: return "NonGaussianFamily";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// that sweep runners can record it per replication and keep going.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace substadj
