#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ses {

/// Base class for every error raised by the toolkit. Data and validation
/// problems derive from it; the CLI maps them to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed input. `row`/`column` are 1-based positions in a CSV file,
/// `offset` is a byte offset for line-oriented formats; unknown fields are 0.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row = 0, std::size_t column = 0,
             std::size_t offset = 0)
      : Error(what), row_(row), column_(column), offset_(offset) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t row_;
  std::size_t column_;
  std::size_t offset_;
};

/// A value outside the [0,1] feature contract.
class RangeError : public ParseError {
 public:
  using ParseError::ParseError;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Numerical failure inside a solver, e.g. an oracle that could not reach its
/// certificate. `best_gap` is the smallest duality gap seen, when meaningful.
class SolverError : public Error {
 public:
  explicit SolverError(const std::string& what, double best_gap = 0.0)
      : Error(what), best_gap_(best_gap) {}
  double best_gap() const noexcept { return best_gap_; }

 private:
  double best_gap_;
};

}  // namespace ses
