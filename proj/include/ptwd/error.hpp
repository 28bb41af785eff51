#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ptwd {

/// Base of every error thrown by the library. The CLI maps any of these to a
/// nonzero exit status with what() on stderr.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed COO line. line() is 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DuplicateKeyError : public Error {
 public:
  DuplicateKeyError(std::size_t line, std::size_t first_line)
      : Error("line " + std::to_string(line) + ": duplicate (i,j,k) key, first seen on line " +
              std::to_string(first_line)),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

/// Operation applied in the wrong normalization state.
class StateError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

/// A dense allocation would exceed the configured element cap.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite value.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t epoch, std::size_t entry_id)
      : Error("training diverged at epoch " + std::to_string(epoch) + ", training entry " +
              std::to_string(entry_id) + " (non-finite value)"),
        epoch_(epoch),
        entry_id_(entry_id) {}
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t entry_id() const noexcept { return entry_id_; }

 private:
  std::size_t epoch_;
  std::size_t entry_id_;
};

}  // namespace ptwd
