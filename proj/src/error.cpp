#include "lionxa/error.hpp"

namespace lionxa {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedScan: return "MalformedScan";
    case ErrorCode::kLabelCountMismatch: return "LabelCountMismatch";
    case ErrorCode::kDuplicateMapping: return "DuplicateMapping";
    case ErrorCode::kInvalidMapping: return "InvalidMapping";
    case ErrorCode::kInvalidScene: return "InvalidScene";
    case ErrorCode::kEmptyCloud: return "EmptyCloud";
    case ErrorCode::kDegenerateStats: return "DegenerateStats";
    case ErrorCode::kInvalidCutout: return "InvalidCutout";
    case ErrorCode::kShapeError: return "ShapeError";
    case ErrorCode::kInvalidVoxelSize: return "InvalidVoxelSize";
    case ErrorCode::kUnsupportedUpsampling: return "UnsupportedUpsampling";
    case ErrorCode::kHeightMismatch: return "HeightMismatch";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kEmptyHistogram: return "EmptyHistogram";
    case ErrorCode::kEmptyLoss: return "EmptyLoss";
    case ErrorCode::kMissingTargetDomain: return "MissingTargetDomain";
    case ErrorCode::kNoValidation: return "NoValidation";
    case ErrorCode::kEmptyMatrix: return "EmptyMatrix";
    case ErrorCode::kDegenerateGap: return "DegenerateGap";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kCheckpointMismatch: return "CheckpointMismatch";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace lionxa
