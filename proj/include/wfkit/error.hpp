#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace wfkit {

enum class ErrorCode {
  kMalformedLine,
  kNonMonotonicTime,
  kEmptyTrace,
  kEmptyInput,
  kInsufficientSites,
  kBadFraction,
  kBadConfig,
  kBadHistogram,
  kConfigError,
  kShapeMismatch,
  kBadRate,
  kNotScalarLoss,
  kEmptyDataset,
  kBadThreshold,
  kBadK,
  kDegenerateLabel,
  kIoError,
};

const char* error_code_name(ErrorCode code);

// Every fault raised by the toolkit. `line()` is 1-based and only meaningful
// for the trace parser codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, std::size_t line = 0)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code),
        line_(line) {}

  ErrorCode code() const noexcept { return code_; }
  std::size_t line() const noexcept { return line_; }

 private:
  ErrorCode code_;
  std::size_t line_;
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedLine: return "MalformedLine";
    case ErrorCode::kNonMonotonicTime: return "NonMonotonicTime";
    case ErrorCode::kEmptyTrace: return "EmptyTrace";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kInsufficientSites: return "InsufficientSites";
    case ErrorCode::kBadFraction: return "BadFraction";
    case ErrorCode::kBadConfig: return "BadConfig";
    case ErrorCode::kBadHistogram: return "BadHistogram";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kBadRate: return "BadRate";
    case ErrorCode::kNotScalarLoss: return "NotScalarLoss";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kBadThreshold: return "BadThreshold";
    case ErrorCode::kBadK: return "BadK";
    case ErrorCode::kDegenerateLabel: return "DegenerateLabel";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace wfkit
