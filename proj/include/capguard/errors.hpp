#pragma once

// Error hierarchy shared by every module.
//
// Each error belongs to one of three families, and the CLI maps the family to
// its exit code:
//   SchemaError       -> 2  (malformed input record, bad config, bad vocabulary)
//   ConsistencyError  -> 3  (inputs that are individually valid but disagree)
//   Error             -> 1  (anything else)

#include <cstddef>
#include <stdexcept>
#include <string>

namespace capguard {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

// --- schema family ---------------------------------------------------------

class ParseError : public SchemaError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : SchemaError("line " + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : SchemaError(what) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_ = 0;
};

class RangeError : public SchemaError {
 public:
  RangeError(std::size_t line, std::string field, const std::string& what)
      : SchemaError("line " + std::to_string(line) + ": field '" + field + "': " + what),
        line_(line),
        field_(std::move(field)) {}

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_ = 0;
  std::string field_;
};

class CoverageError : public SchemaError {
 public:
  using SchemaError::SchemaError;
};

class VocabError : public SchemaError {
 public:
  using SchemaError::SchemaError;
};

class ConfigError : public SchemaError {
 public:
  using SchemaError::SchemaError;
};

class SigmaRangeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// --- consistency family ----------------------------------------------------

class MismatchError : public ConsistencyError {
 public:
  using ConsistencyError::ConsistencyError;
};

class LengthMismatchError : public ConsistencyError {
 public:
  using ConsistencyError::ConsistencyError;
};

class AlignmentError : public ConsistencyError {
 public:
  using ConsistencyError::ConsistencyError;
};

class DegenerateError : public ConsistencyError {
 public:
  using ConsistencyError::ConsistencyError;
};

class InvariantError : public ConsistencyError {
 public:
  using ConsistencyError::ConsistencyError;
};

class EmptyInputError : public ConsistencyError {
 public:
  using ConsistencyError::ConsistencyError;
};

class EmptyPoolError : public ConsistencyError {
 public:
  using ConsistencyError::ConsistencyError;
};

class ShapeError : public ConsistencyError {
 public:
  using ConsistencyError::ConsistencyError;
};

class DegenerateRowError : public ConsistencyError {
 public:
  using ConsistencyError::ConsistencyError;
};

class AllRemovedError : public ConsistencyError {
 public:
  using ConsistencyError::ConsistencyError;
};

class NoSlotError : public ConsistencyError {
 public:
  using ConsistencyError::ConsistencyError;
};

class EmptyObjectsError : public ConsistencyError {
 public:
  using ConsistencyError::ConsistencyError;
};

}  // namespace capguard
