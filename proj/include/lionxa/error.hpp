#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lionxa {

enum class ErrorCode {
  kMalformedScan,
  kLabelCountMismatch,
  kDuplicateMapping,
  kInvalidMapping,
  kInvalidScene,
  kEmptyCloud,
  kDegenerateStats,
  kInvalidCutout,
  kShapeError,
  kInvalidVoxelSize,
  kUnsupportedUpsampling,
  kHeightMismatch,
  kEmptyInput,
  kEmptyHistogram,
  kEmptyLoss,
  kMissingTargetDomain,
  kNoValidation,
  kEmptyMatrix,
  kDegenerateGap,
  kConfigError,
  kCheckpointMismatch,
  kIoError,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lionxa
