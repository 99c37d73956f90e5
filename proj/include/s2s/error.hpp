#pragma once

#include <stdexcept>
#include <string>

namespace s2s {

// Base class for every error raised by the library. The CLI maps these to
// exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data (files, encodings). Carries a location when known.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Arguments that violate an operation's preconditions.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace s2s
