#include "legslam/error.hpp"

namespace legslam {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DepthTooSmall: return "DepthTooSmall";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::OutOfFov: return "OutOfFov";
    case ErrorCode::InsufficientNeighbors: return "InsufficientNeighbors";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::TrackingLost: return "TrackingLost";
    case ErrorCode::DegenerateConfig: return "DegenerateConfig";
    case ErrorCode::InsufficientPoints: return "InsufficientPoints";
    case ErrorCode::TooFewCorrespondences: return "TooFewCorrespondences";
    case ErrorCode::NonMonotonicTimestamps: return "NonMonotonicTimestamps";
    case ErrorCode::SampleGap: return "SampleGap";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::EmptySubmap: return "EmptySubmap";
    case ErrorCode::MissingIndexFile: return "MissingIndexFile";
    case ErrorCode::NoAssociations: return "NoAssociations";
    case ErrorCode::InvalidSpline: return "InvalidSpline";
    case ErrorCode::TooFewPairs: return "TooFewPairs";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

}  // namespace legslam
