#pragma once

#include <stdexcept>
#include <string>

namespace aether {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unsupported file content. `kind()` tells the failure modes apart.
class FormatError : public Error {
 public:
  enum class Kind {
    BadMagic,
    UnsupportedVersion,
    MalformedHeader,
    TruncatedPayload,
    InvalidData,
  };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Violated precondition or configuration constraint.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf detected in a forward/backward pass or in a loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace aether
