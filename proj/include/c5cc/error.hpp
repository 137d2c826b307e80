#pragma once

#include <stdexcept>
#include <string>

namespace c5cc {

// Error categories line up with the CLI exit codes and the C API status codes.
enum class ErrorKind {
  kUsage = 1,
  kData = 2,
  kNumerical = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

// Bad input data: malformed files, empty sets, shape mismatches.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::kNumerical, what) {}
};

}  // namespace c5cc
