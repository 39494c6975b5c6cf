#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace textcam {

enum class ErrorCode {
  kMissingFile,
  kManifestParseError,
  kShapeMismatch,
  kNonFiniteValue,
  kIoError,
  kInvariantViolation,
  kInvalidArgument,
  kIndexOutOfRange,
  kTooFewSamples,
  kSingularScatter,
  kIndefiniteSystem,
  kUnboundedObjective,
  kEmptyGroup,
  kWouldEmptyGroup,
  kZeroVector,
  kLengthMismatch,
  kEmptySet,
};

std::string_view error_code_name(ErrorCode code) noexcept;

// Every module reports failures through this type; the code survives across
// the CLI and Python boundaries so callers can map it to exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace textcam
