#pragma once

#include <stdexcept>
#include <string>

namespace gsfm {

enum class ErrorCode {
  kInvalidArgument,
  kZeroVector,
  kBehindCamera,
  kDegenerate,
  kDimensionMismatch,
  kTooFewMatches,
  kNoModelFound,
  kCheiralityAmbiguous,
  kIndeterminateSystem,
  kDisconnected,
  kNotConverged,
  kUnderconstrained,
  kTrackTooShort,
  kAllTracksFiltered,
  kMissingPose,
  kDegenerateScene,
  kIo,
  kParse,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kBehindCamera: return "BehindCamera";
    case ErrorCode::kDegenerate: return "Degenerate";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kTooFewMatches: return "TooFewMatches";
    case ErrorCode::kNoModelFound: return "NoModelFound";
    case ErrorCode::kCheiralityAmbiguous: return "CheiralityAmbiguous";
    case ErrorCode::kIndeterminateSystem: return "IndeterminateSystem";
    case ErrorCode::kDisconnected: return "Disconnected";
    case ErrorCode::kNotConverged: return "NotConverged";
    case ErrorCode::kUnderconstrained: return "Underconstrained";
    case ErrorCode::kTrackTooShort: return "TrackTooShort";
    case ErrorCode::kAllTracksFiltered: return "AllTracksFiltered";
    case ErrorCode::kMissingPose: return "MissingPose";
    case ErrorCode::kDegenerateScene: return "DegenerateScene";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kParse: return "Parse";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable code; every throwing operation in
/// the library uses this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gsfm
