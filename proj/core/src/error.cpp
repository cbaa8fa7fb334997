#include "vadforge/error.hpp"

namespace vadforge {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kDimension: return "dimension error";
    case ErrorCode::kParameter: return "parameter error";
    case ErrorCode::kUsage: return "usage error";
    case ErrorCode::kInput: return "input error";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kMetric: return "metric error";
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kCheckpointMagic: return "checkpoint magic mismatch";
    case ErrorCode::kCheckpointVersion: return "checkpoint version mismatch";
    case ErrorCode::kCheckpointTruncated: return "checkpoint truncated";
    case ErrorCode::kCheckpointChecksum: return "checkpoint checksum failure";
    case ErrorCode::kNumeric: return "numeric error";
  }
  return "unknown error";
}

}  // namespace vadforge
