#pragma once

#include <stdexcept>
#include <string>

namespace lgdg {

// Base of every error the library throws. Subclasses map onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Input outside an operation's mathematical domain (log of non-positive etc).
class DomainError : public Error {
 public:
  using Error::Error;
};

class TapeError : public Error {
 public:
  using Error::Error;
};

// Exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Exit code 3.
class ProtocolViolation : public Error {
 public:
  using Error::Error;
};

// Exit code 4.
class NumericDivergence : public Error {
 public:
  using Error::Error;
};

class UndefinedMetric : public Error {
 public:
  UndefinedMetric(const std::string& what, int criterion = -1)
      : Error(what), criterion_(criterion) {}
  int criterion() const { return criterion_; }

 private:
  int criterion_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace lgdg
