#pragma once

#include <stdexcept>
#include <string>

namespace pptlab {

// Invalid or inconsistent configuration (unknown preset, bad ranges, K mismatch).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem or stream failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Container was readable but its content is not what we wrote.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

// NaN/Inf in values, gradients or losses.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Token sequence cannot be built from the given history.
class EncodingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller violated a documented precondition (empty inputs, missing records).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace pptlab
