#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fssuw {

enum class ErrorCode {
  MissingDirectory,
  UnmappableMaskColor,
  UnknownClass,
  InsufficientClasses,
  ClassTooSmall,
  EmptyMaskAfterResize,
  IndivisibleInput,
  ConfigMismatch,
  CorruptFile,
  ShapeMismatch,
  EmptyMask,
  PolarityMismatch,
  DegenerateGT,
  NonFiniteLoss,
  EmptyEpisodeList,
  InvalidArgument,
  IoError,
  UsageError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingDirectory: return "MissingDirectory";
    case ErrorCode::UnmappableMaskColor: return "UnmappableMaskColor";
    case ErrorCode::UnknownClass: return "UnknownClass";
    case ErrorCode::InsufficientClasses: return "InsufficientClasses";
    case ErrorCode::ClassTooSmall: return "ClassTooSmall";
    case ErrorCode::EmptyMaskAfterResize: return "EmptyMaskAfterResize";
    case ErrorCode::IndivisibleInput: return "IndivisibleInput";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::PolarityMismatch: return "PolarityMismatch";
    case ErrorCode::DegenerateGT: return "DegenerateGT";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyEpisodeList: return "EmptyEpisodeList";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::UsageError: return "UsageError";
  }
  return "Unknown";
}

/// Domain error carrying a machine-checkable code. The message names the
/// offending file, class or shape where one exists.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace fssuw
