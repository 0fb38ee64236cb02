#pragma once

#include <stdexcept>
#include <string>

namespace aismerge {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInputError : public Error {
 public:
  using Error::Error;
};

// Vector/matrix widths that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// API called out of order (e.g. backward before forward).
class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SolverError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Trajectory CSV ingestion errors.
class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& column, const std::string& what)
      : Error(what), column_(column) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

class TimingError : public Error {
 public:
  TimingError(std::size_t row, const std::string& what) : Error(what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// Model file loading errors.
class ModelLoadError : public Error {
 public:
  enum class Kind { kVersionMismatch, kDimensionMismatch, kMalformed };
  ModelLoadError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace aismerge
