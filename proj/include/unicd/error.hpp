#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace unicd {

enum class ErrorCode {
  kShapeMismatch,
  kStrideError,
  kRangeError,
  kBackendUnavailable,
  kChannelMismatch,
  kEmbeddingMissing,
  kLengthMismatch,
  kEmptyInput,
  kMissingPair,
  kCorruptImage,
  kLayoutError,
  kIoError,
  kModeLabelMismatch,
  kNonFiniteLoss,
  kCheckpointVersionMismatch,
  kInvalidConfig,
};

std::string_view to_string(ErrorCode code);

// Every recoverable failure in the library is an Error carrying a code, so
// callers (and tests) can dispatch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace unicd
