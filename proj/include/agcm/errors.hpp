#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace agcm {

/// Base for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// A vector (or matrix row) whose Euclidean norm is at or below kNormEpsilon.
class DegenerateNorm : public Error {
 public:
  explicit DegenerateNorm(std::string what, std::ptrdiff_t row = -1)
      : Error(std::move(what)), row_(row) {}
  /// Offending row, or -1 when the input was a single vector.
  std::ptrdiff_t row() const noexcept { return row_; }

 private:
  std::ptrdiff_t row_;
};

/// A constant coordinate sequence handed to the Pearson metric.
class DegenerateVariance : public Error {
 public:
  explicit DegenerateVariance(std::string what, std::ptrdiff_t row = -1)
      : Error(std::move(what)), row_(row) {}
  std::ptrdiff_t row() const noexcept { return row_; }

 private:
  std::ptrdiff_t row_;
};

class EmptyBatch : public Error {
 public:
  using Error::Error;
};

class EmptyDataset : public Error {
 public:
  using Error::Error;
};

class ShotCountMismatch : public Error {
 public:
  using Error::Error;
};

class InfeasibleSeparation : public Error {
 public:
  using Error::Error;
};

class EmptyMatrix : public Error {
 public:
  using Error::Error;
};

class EmptyClass : public Error {
 public:
  using Error::Error;
};

/// Malformed file content; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace agcm
