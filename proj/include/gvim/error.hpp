#pragma once

#include <stdexcept>
#include <string>

namespace gvim {

// Failure categories. The CLI maps each category to an exit code.
enum class ErrorKind {
  Split,
  Feature,
  Parse,
  Io,
  Metric,
  Numeric,
  BiasUndefined,
  SingularDesign,
  Spline,
  Config,
  Schema,
  Estimation,
  Unavailable,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Split: return "SplitError";
    case ErrorKind::Feature: return "FeatureError";
    case ErrorKind::Parse: return "ParseError";
    case ErrorKind::Io: return "IoError";
    case ErrorKind::Metric: return "MetricError";
    case ErrorKind::Numeric: return "NumericError";
    case ErrorKind::BiasUndefined: return "BiasUndefined";
    case ErrorKind::SingularDesign: return "SingularDesign";
    case ErrorKind::Spline: return "SplineError";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::Schema: return "SchemaError";
    case ErrorKind::Estimation: return "EstimationError";
    case ErrorKind::Unavailable: return "Unavailable";
  }
  return "Error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

template <ErrorKind K>
class TypedError : public Error {
 public:
  explicit TypedError(const std::string& what) : Error(K, what) {}
};

using SplitError = TypedError<ErrorKind::Split>;
using FeatureError = TypedError<ErrorKind::Feature>;
using ParseError = TypedError<ErrorKind::Parse>;
using IoError = TypedError<ErrorKind::Io>;
using MetricError = TypedError<ErrorKind::Metric>;
using NumericError = TypedError<ErrorKind::Numeric>;
using BiasUndefined = TypedError<ErrorKind::BiasUndefined>;
using SingularDesign = TypedError<ErrorKind::SingularDesign>;
using SplineError = TypedError<ErrorKind::Spline>;
using ConfigError = TypedError<ErrorKind::Config>;
using SchemaError = TypedError<ErrorKind::Schema>;
using EstimationError = TypedError<ErrorKind::Estimation>;
using UnavailableError = TypedError<ErrorKind::Unavailable>;

}  // namespace gvim
