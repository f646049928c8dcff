#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace relgraph {

enum class ErrorCode {
  kInvalidArgument,
  kParse,
  kValidation,
  kLookup,
  kMagicMismatch,
  kVersionMismatch,
  kTruncated,
  kDimMismatch,
  kMaskMismatch,
  kConfigShape,
  kIo,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kValidation: return "validation error";
    case ErrorCode::kLookup: return "lookup error";
    case ErrorCode::kMagicMismatch: return "magic mismatch";
    case ErrorCode::kVersionMismatch: return "version mismatch";
    case ErrorCode::kTruncated: return "truncated file";
    case ErrorCode::kDimMismatch: return "dimension mismatch";
    case ErrorCode::kMaskMismatch: return "mask mismatch";
    case ErrorCode::kConfigShape: return "config/shape mismatch";
    case ErrorCode::kIo: return "i/o error";
  }
  return "unknown error";
}

// Single exception type for the library; callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace relgraph
