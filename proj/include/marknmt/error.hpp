#pragma once

#include <stdexcept>
#include <string>

namespace marknmt {

// Error categories map onto the CLI exit codes: usage 1, data 2, numeric 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Raised by tensor ops on non-conforming operands; carries both shapes in the message.
class ShapeError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace marknmt
