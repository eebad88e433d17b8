#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace adaptlm {

enum class ErrorCode : std::uint8_t {
  invalid_argument,
  io,
  format,
  fingerprint_mismatch,
  numeric,
  out_of_range,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Thrown when a forward or update produces a non-finite value.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message) : Error(ErrorCode::numeric, message) {}
};

/// Thrown by binary readers; carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& message, std::uint64_t offset)
      : Error(ErrorCode::format, message + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace adaptlm
