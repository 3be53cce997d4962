#include "fcac/error.hpp"

namespace fcac {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kClipTooShort: return "ClipTooShort";
    case ErrorCode::kInvalidLength: return "InvalidLength";
    case ErrorCode::kFrameTooLong: return "FrameTooLong";
    case ErrorCode::kInvalidBand: return "InvalidBand";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonScalarRoot: return "NonScalarRoot";
    case ErrorCode::kNoPositives: return "NoPositives";
    case ErrorCode::kBatchTooSmall: return "BatchTooSmall";
    case ErrorCode::kLabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kEmptyClass: return "EmptyClass";
    case ErrorCode::kEmptyPrototype: return "EmptyPrototype";
    case ErrorCode::kDuplicateClass: return "DuplicateClass";
    case ErrorCode::kEmptyClassifier: return "EmptyClassifier";
    case ErrorCode::kMissingPrototype: return "MissingPrototype";
    case ErrorCode::kInsufficientClasses: return "InsufficientClasses";
    case ErrorCode::kInsufficientShots: return "InsufficientShots";
    case ErrorCode::kEmptyEvalSet: return "EmptyEvalSet";
    case ErrorCode::kTooFewSessions: return "TooFewSessions";
    case ErrorCode::kDegenerateInput: return "DegenerateInput";
    case ErrorCode::kDiverged: return "Diverged";
    case ErrorCode::kTooManyClasses: return "TooManyClasses";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kUnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::kMalformedHeader: return "MalformedHeader";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kMissingFile: return "MissingFile";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kCorruptChecksum: return "CorruptChecksum";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
  }
  return "UnknownError";
}

}  // namespace fcac
