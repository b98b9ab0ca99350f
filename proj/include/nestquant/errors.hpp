#pragma once

#include <stdexcept>
#include <string>

namespace nestquant {

// Base for every error the library raises on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidBitwidthError : Error {
  using Error::Error;
};

// A value does not fit the declared integer width; carries the offending index.
struct RangeError : Error {
  RangeError(const std::string& what, std::int64_t index = -1)
      : Error(what), index(index) {}
  std::int64_t index;
};

struct ShapeError : Error {
  using Error::Error;
};

// Non-finite or otherwise unusable numeric input.
struct DataError : Error {
  using Error::Error;
};

// Malformed container or frame bytes; offset points at the first bad byte.
struct FormatError : Error {
  FormatError(const std::string& what, std::int64_t offset = -1)
      : Error(what), offset(offset) {}
  std::int64_t offset;
};

struct TruncationError : Error {
  TruncationError(const std::string& what, std::int64_t expected, std::int64_t actual)
      : Error(what + " (expected " + std::to_string(expected) + " bytes, got " +
              std::to_string(actual) + ")"),
        expected(expected),
        actual(actual) {}
  std::int64_t expected;
  std::int64_t actual;
};

struct VersionError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Illegal state machine transition or an aborted one.
struct StateError : Error {
  using Error::Error;
};

struct TrainingError : Error {
  using Error::Error;
};

// Undefined statistic (constant input, zero denominator).
struct UndefinedValueError : Error {
  using Error::Error;
};

struct TransferError : Error {
  using Error::Error;
};

}  // namespace nestquant
