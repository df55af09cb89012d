#pragma once

#include <stdexcept>
#include <string>

namespace wsdf {

// Base of every error thrown by the library. The CLI maps subclasses onto
// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class DegeneracyError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss during training.
class NumericalAbort : public Error {
 public:
  NumericalAbort(const std::string& what, std::string dump_path)
      : Error(what), dump_path_(std::move(dump_path)) {}
  const std::string& dump_path() const { return dump_path_; }

 private:
  std::string dump_path_;
};

}  // namespace wsdf
