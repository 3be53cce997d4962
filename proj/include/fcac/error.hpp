#pragma once

#include <stdexcept>
#include <string>

namespace fcac {

enum class ErrorCode {
  // dsp
  kClipTooShort,
  kInvalidLength,
  kFrameTooLong,
  kInvalidBand,
  // autodiff / optimizer
  kShapeMismatch,
  kNonScalarRoot,
  // losses
  kNoPositives,
  kBatchTooSmall,
  kLabelOutOfRange,
  kZeroVector,
  // classifier
  kEmptyClass,
  kEmptyPrototype,
  kDuplicateClass,
  kEmptyClassifier,
  kMissingPrototype,
  // protocol
  kInsufficientClasses,
  kInsufficientShots,
  kEmptyEvalSet,
  kTooFewSessions,
  kDegenerateInput,
  kDiverged,
  // datagen / io
  kTooManyClasses,
  kIoError,
  kUnsupportedFormat,
  kMalformedHeader,
  kParseError,
  kMissingFile,
  // checkpoint
  kVersionMismatch,
  kCorruptChecksum,
  // config
  kInvalidConfig,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace fcac
