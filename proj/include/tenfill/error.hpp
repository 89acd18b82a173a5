#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tenfill {

// Error hierarchy. Everything derives from Error so callers can catch once.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DataError : public Error {
 public:
  DataError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class OperatorError : public Error {
 public:
  using Error::Error;
};

/// Raised when a posterior system matrix is not numerically SPD even after
/// jitter escalation. Carries the mode and (1-based) row that failed.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, std::size_t mode, std::size_t row)
      : Error(what + " (mode " + std::to_string(mode) + ", row " +
              std::to_string(row) + ")"),
        mode_(mode),
        row_(row) {}
  std::size_t mode() const noexcept { return mode_; }
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t mode_;
  std::size_t row_;
};

/// Error raised while recovering one slice of a stack; slice is 1-based.
class SliceError : public Error {
 public:
  SliceError(const std::string& what, std::size_t slice)
      : Error("slice " + std::to_string(slice) + ": " + what), slice_(slice) {}
  std::size_t slice() const noexcept { return slice_; }

 private:
  std::size_t slice_;
};

namespace detail {

inline std::string format_dims(const std::vector<std::size_t>& dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (k) os << 'x';
    os << dims[k];
  }
  os << ')';
  return os.str();
}

}  // namespace detail
}  // namespace tenfill
