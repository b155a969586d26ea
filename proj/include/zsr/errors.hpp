#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace zsr {

// Caller-side mistakes: bad configuration, bad split, out-of-range labels.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IndexError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Violated API precondition (non-scalar backward root, missing gradient key).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Dataset-level inconsistency, e.g. a seen category without sketches.
class DataError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public IoError {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : IoError(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace zsr
