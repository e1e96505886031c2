#include "strata/error.hpp"

namespace strata {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io: return "Io";
    case ErrorKind::MalformedRow: return "MalformedRow";
    case ErrorKind::DomainViolation: return "DomainViolation";
    case ErrorKind::EmptyCell: return "EmptyCell";
    case ErrorKind::UnsupportedShift: return "UnsupportedShift";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::WeakFirstStage: return "WeakFirstStage";
    case ErrorKind::WeakShare: return "WeakShare";
    case ErrorKind::BoundsInverted: return "BoundsInverted";
    case ErrorKind::UnsupportedFamily: return "UnsupportedFamily";
    case ErrorKind::TooLarge: return "TooLarge";
    case ErrorKind::TooManyFailures: return "TooManyFailures";
    case ErrorKind::SingularJacobian: return "SingularJacobian";
    case ErrorKind::ZeroDensity: return "ZeroDensity";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io:
    case ErrorKind::MalformedRow:
    case ErrorKind::DomainViolation:
    case ErrorKind::EmptyCell:
    case ErrorKind::UnsupportedShift:
    case ErrorKind::OutOfRange:
    case ErrorKind::InvalidConfig:
    case ErrorKind::InvalidSpec:
      return ErrorCategory::Validation;
    case ErrorKind::WeakFirstStage:
    case ErrorKind::WeakShare:
    case ErrorKind::BoundsInverted:
    case ErrorKind::UnsupportedFamily:
    case ErrorKind::TooLarge:
      return ErrorCategory::Estimation;
    case ErrorKind::TooManyFailures:
    case ErrorKind::SingularJacobian:
    case ErrorKind::ZeroDensity:
      return ErrorCategory::Inference;
  }
  return ErrorCategory::Validation;
}

Error::Error(ErrorKind kind, const std::string& message,
             std::optional<std::size_t> row)
    : std::runtime_error(message), kind_(kind), row_(row) {}

}  // namespace strata
