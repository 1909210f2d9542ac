#include "g2l/errors.hpp"

namespace g2l {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::kEmptyCloud: return "EmptyCloud";
    case ErrorCode::kMissingDepthAtPeak: return "MissingDepthAtPeak";
    case ErrorCode::kDegenerateModel: return "DegenerateModel";
    case ErrorCode::kTooFewPoints: return "TooFewPoints";
    case ErrorCode::kEmptySegmentation: return "EmptySegmentation";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kObjectNotVisible: return "ObjectNotVisible";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace g2l
