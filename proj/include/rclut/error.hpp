#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rclut {

enum class ErrorCode {
  InvalidArgument,
  InvalidConfig,
  Io,
  UnsupportedBitDepth,
  UnsupportedFormat,
  CorruptImage,
  EmptyImage,
  WrongColorspace,
  ShapeMismatch,
  UnsupportedInterval,
  CorruptPack,
  TopologyMismatch,
  NonFinite,
  DataError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
    case ErrorCode::UnsupportedBitDepth: return "UnsupportedBitDepth";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::CorruptImage: return "CorruptImage";
    case ErrorCode::EmptyImage: return "EmptyImage";
    case ErrorCode::WrongColorspace: return "WrongColorspace";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnsupportedInterval: return "UnsupportedInterval";
    case ErrorCode::CorruptPack: return "CorruptPack";
    case ErrorCode::TopologyMismatch: return "TopologyMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::DataError: return "DataError";
  }
  return "Unknown";
}

/// Exception type used throughout the library. The code is stable and is what
/// the command-line tool maps onto exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace rclut
