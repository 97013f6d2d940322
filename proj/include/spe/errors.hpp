#pragma once

#include <stdexcept>
#include <string>

namespace spe {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A parameter is outside its admissible domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// A window or range does not fit inside the data it is applied to.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite input or overflow during evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An attention row has a zero (or negative) normalizer.
class DegenerateAttentionError : public NumericError {
 public:
  DegenerateAttentionError(const std::string& what, long row)
      : NumericError(what), row_(row) {}
  long row() const noexcept { return row_; }

 private:
  long row_;
};

/// Optimization produced a non-finite loss.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, long iteration)
      : NumericError(what), iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

/// Malformed text input. `line` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace spe
