#pragma once

#include <stdexcept>
#include <string>

namespace poolcf {

// Base for every error raised by the library. Messages are meant for humans;
// the derived type is what callers dispatch on.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (out-of-range argument, bad units).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Input data is malformed or insufficient for the requested operation.
class DataError : public Error {
 public:
  using Error::Error;
};

class EmptyDatasetError : public DataError {
 public:
  using DataError::DataError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training diverged; the message names the epoch and batch.
class TrainingError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace poolcf
