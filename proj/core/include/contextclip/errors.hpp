#pragma once

#include <stdexcept>
#include <string>

namespace contextclip {

// Base of every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Incompatible shapes, lengths or dimensions.
class ShapeError : public Error {
  public:
    using Error::Error;
};

// Non-finite results, domain violations (log of non-positive, division by zero).
class NumericError : public Error {
  public:
    using Error::Error;
};

// Invalid configuration or precondition on a value argument.
class ConfigError : public Error {
  public:
    using Error::Error;
};

// Data that cannot be used as given (empty corpus, out-of-vocabulary tokens,
// class ids beyond the configured count).
class DataError : public Error {
  public:
    using Error::Error;
};

// File system failures.
class IoError : public Error {
  public:
    using Error::Error;
};

// Malformed persisted data (corpus lines, checkpoints).
class ParseError : public Error {
  public:
    using Error::Error;
};

class VersionError : public ParseError {
  public:
    using ParseError::ParseError;
};

}  // namespace contextclip
