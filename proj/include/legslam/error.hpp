#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace legslam {

enum class ErrorCode {
  InvalidArgument,
  DepthTooSmall,
  EmptyCloud,
  OutOfFov,
  InsufficientNeighbors,
  TooSmall,
  TrackingLost,
  DegenerateConfig,
  InsufficientPoints,
  TooFewCorrespondences,
  NonMonotonicTimestamps,
  SampleGap,
  OutOfRange,
  NumericalFailure,
  EmptySubmap,
  MissingIndexFile,
  NoAssociations,
  InvalidSpline,
  TooFewPairs,
  IoError,
  ParseError,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-readable code. Thrown for contract
/// violations and unrecoverable input problems; expected per-call failures
/// (invalid plane fit, degenerate essential matrix, ...) are returned as
/// status values instead.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace legslam
