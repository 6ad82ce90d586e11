#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedscan {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor dimensions do not fit the operation (mismatched shapes, bad dims).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value is outside the operation's admissible domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an API precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Federation peers disagree on the parameter name set.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A masked aggregation is missing contributions; the sum cannot be recovered.
class MaskDropoutError : public Error {
 public:
  using Error::Error;
};

/// Run configuration is invalid (unknown key, bad type, out-of-range value).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Filesystem operation failed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A binary file does not conform to its format; carries the byte offset of
/// the first inconsistency.
class FormatError : public Error {
 public:
  FormatError(const std::string& msg, std::size_t byte_offset)
      : Error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::size_t byte_offset_ = 0;
};

/// A text record could not be parsed; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t line)
      : Error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_ = 0;
};

}  // namespace fedscan
