#pragma once

#include <stdexcept>
#include <string>

namespace rank1 {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents or ranks that do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside its admissible range (probabilities, rates, tolerances).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file contents.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace rank1
