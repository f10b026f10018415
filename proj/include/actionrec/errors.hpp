#pragma once

#include <stdexcept>
#include <string>

namespace actionrec {

// Every failure the library reports derives from Error so callers can
// catch one type at the CLI boundary.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Dimension / channel-count / length mismatches.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Index or parameter outside its valid range.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Request exceeds what the algorithm is allowed to do (enumeration size,
// sampling more than available).
class CapacityError : public Error {
 public:
  using Error::Error;
};

class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace actionrec
