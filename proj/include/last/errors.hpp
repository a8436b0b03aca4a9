#pragma once

#include <stdexcept>
#include <string>

namespace last {

// Base class for all errors raised by the toolkit.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Tensor/graph shape mismatch; message carries the offending node where known.
class ShapeError : public Error {
public:
  using Error::Error;
};

// Non-finite value produced where the contract requires finite arithmetic.
class NumericError : public Error {
public:
  using Error::Error;
};

// Invalid argument outside a structured file context (bad label, eps < 0, ...).
class ValueError : public Error {
public:
  using Error::Error;
};

// Configuration file / override problems (unknown key, unparsable value).
class ConfigError : public Error {
public:
  using Error::Error;
};

// Filesystem access problems.
class IoError : public Error {
public:
  using Error::Error;
};

// Structured-file problems, each kind distinct so callers can react.
class FormatError : public IoError {
public:
  using IoError::IoError;
};

class BadMagicError : public FormatError {
public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
public:
  using FormatError::FormatError;
};

// Header-declared spec/count/dtype disagrees with the payload or the caller.
class SpecMismatchError : public FormatError {
public:
  using FormatError::FormatError;
};

class CountMismatchError : public FormatError {
public:
  using FormatError::FormatError;
};

}  // namespace last
