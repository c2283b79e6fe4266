#include "netseg/error.hpp"

namespace netseg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::TargetTooLarge: return "TargetTooLarge";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::Io: return "Io";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::DimensionOverflow: return "DimensionOverflow";
    case ErrorCode::ValueOutOfRange: return "ValueOutOfRange";
    case ErrorCode::UnknownSchema: return "UnknownSchema";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
    case ErrorCode::InconsistentMasks: return "InconsistentMasks";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::NonPositiveSample: return "NonPositiveSample";
    case ErrorCode::TooFewGroups: return "TooFewGroups";
    case ErrorCode::ZeroWithinVariance: return "ZeroWithinVariance";
    case ErrorCode::BadGroupCount: return "BadGroupCount";
    case ErrorCode::IndivisibleShape: return "IndivisibleShape";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::ModelSegmentMismatch: return "ModelSegmentMismatch";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnknownSchema:
      return ErrorCategory::Usage;
    case ErrorCode::ZeroVariance:
    case ErrorCode::DegenerateData:
    case ErrorCode::ZeroWithinVariance:
    case ErrorCode::NonFiniteLoss:
      return ErrorCategory::Numeric;
    default:
      return ErrorCategory::Data;
  }
}

}  // namespace netseg
