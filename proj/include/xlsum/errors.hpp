#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace xlsum {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonHermitian : public Error {
 public:
  using Error::Error;
};

class NonFinite : public Error {
 public:
  using Error::Error;
};

class IllConditioned : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

/// Joint assignment space larger than the configured oracle budget.
class BudgetExceeded : public Error {
 public:
  BudgetExceeded(std::uint64_t space_size, std::uint64_t budget)
      : Error("assignment space " + std::to_string(space_size) +
              " exceeds oracle budget " + std::to_string(budget)),
        space_size_(space_size) {}
  std::uint64_t space_size() const { return space_size_; }

 private:
  std::uint64_t space_size_;
};

class AllInfeasible : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class Diverged : public Error {
 public:
  using Error::Error;
};

/// Malformed or unsupported file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace xlsum
