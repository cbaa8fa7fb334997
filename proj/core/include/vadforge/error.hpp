#pragma once

#include <stdexcept>
#include <string>

namespace vadforge {

enum class ErrorCode {
  kDimension,
  kParameter,
  kUsage,
  kInput,
  kConfig,
  kMetric,
  kIo,
  kCheckpointMagic,
  kCheckpointVersion,
  kCheckpointTruncated,
  kCheckpointChecksum,
  kNumeric,
};

const char* to_string(ErrorCode code) noexcept;

/// Library-wide exception. Every failure raised by vadforge carries a code so
/// callers (the CLI in particular) can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace vadforge
