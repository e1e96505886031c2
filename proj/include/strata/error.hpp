#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace strata {

enum class ErrorKind {
  Io,
  MalformedRow,
  DomainViolation,
  EmptyCell,
  UnsupportedShift,
  OutOfRange,
  InvalidConfig,
  InvalidSpec,
  WeakFirstStage,
  WeakShare,
  BoundsInverted,
  UnsupportedFamily,
  TooLarge,
  TooManyFailures,
  SingularJacobian,
  ZeroDensity,
};

// Process exit codes: validation 2, estimation 3, inference 4.
enum class ErrorCategory { Validation = 2, Estimation = 3, Inference = 4 };

std::string_view to_string(ErrorKind kind);
ErrorCategory category_of(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message,
        std::optional<std::size_t> row = std::nullopt);

  ErrorKind kind() const { return kind_; }
  ErrorCategory category() const { return category_of(kind_); }
  int exit_code() const { return static_cast<int>(category()); }
  // 1-based data row (header excluded) for ingestion errors.
  std::optional<std::size_t> row() const { return row_; }

 private:
  ErrorKind kind_;
  std::optional<std::size_t> row_;
};

}  // namespace strata
