#include "textcam/error.hpp"

namespace textcam {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kMissingFile: return "MissingFile";
    case ErrorCode::kManifestParseError: return "ManifestParseError";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kInvariantViolation: return "InvariantViolation";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kTooFewSamples: return "TooFewSamples";
    case ErrorCode::kSingularScatter: return "SingularScatter";
    case ErrorCode::kIndefiniteSystem: return "IndefiniteSystem";
    case ErrorCode::kUnboundedObjective: return "UnboundedObjective";
    case ErrorCode::kEmptyGroup: return "EmptyGroup";
    case ErrorCode::kWouldEmptyGroup: return "WouldEmptyGroup";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kEmptySet: return "EmptySet";
  }
  return "Unknown";
}

}  // namespace textcam
