#pragma once

#include <stdexcept>
#include <string>

namespace somforge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes, ranks or resolution levels.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class DTypeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, singular systems and other numerical failures.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed SOMT payloads. `kind()` distinguishes the failure.
class FormatError : public Error {
 public:
  enum class Kind { bad_magic, version_mismatch, truncated, invalid };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace somforge
