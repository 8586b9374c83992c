#pragma once

#include <stdexcept>
#include <string>

namespace repdetect {

// Base of every error the toolkit raises. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text (JSON manifest, tables, reports).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Manifest schema version not understood.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Checksum mismatch, dangling id, missing referenced file.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// REPM decode/encode failure: bad magic, truncation, non-finite values.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A bundle violates an alignment or prediction invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Input data cannot support the requested computation (empty label
// occupancy, too few neighbors, degenerate split, single-class training set).
class DataError : public Error {
 public:
  using Error::Error;
};

// Caller passed arguments outside an operation's domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace repdetect
