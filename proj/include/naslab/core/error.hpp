#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace naslab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An input tensor or value violated an operation's precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Templates, configs, or parameters are mutually inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed text or binary input. `offset` is the byte position of the fault.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// An optimization produced non-finite values.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Stored artifact does not match its recorded content hash.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

}  // namespace naslab
