#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace netseg {

enum class ErrorCode {
  InvalidArgument,
  ShapeMismatch,
  TargetTooLarge,
  EmptyMask,
  ZeroVariance,
  // nifti_io
  Io,
  BadMagic,
  UnsupportedDatatype,
  TruncatedFile,
  DimensionOverflow,
  ValueOutOfRange,
  // label_algebra
  UnknownSchema,
  InvalidLabel,
  InconsistentMasks,
  // stats
  TooFewSamples,
  DegenerateData,
  NonPositiveSample,
  TooFewGroups,
  ZeroWithinVariance,
  // neural
  BadGroupCount,
  IndivisibleShape,
  EmptyDataset,
  NonFiniteLoss,
  // extraction / phantom
  ModelSegmentMismatch,
  InvalidSpec,
};

std::string_view to_string(ErrorCode code);

/// Broad failure class, used by the command line tool to pick an exit status.
enum class ErrorCategory { Usage, Data, Numeric };

ErrorCategory category_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace netseg
