#pragma once

#include <stdexcept>
#include <string>

namespace bslb {

/// Error classes. Each maps to a distinct process exit code in the CLI.
enum class ErrorCategory {
  config = 2,
  shape = 3,
  index = 4,
  parameter = 5,
  numeric = 6,
  format = 7,
  io = 8,
  geometry = 9,
  degenerate = 10,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorCategory::shape, what) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& what) : Error(ErrorCategory::index, what) {}
};

class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error(ErrorCategory::parameter, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCategory::numeric, what) {}
};

/// Training produced a non-finite objective.
class DivergenceError : public NumericError {
 public:
  explicit DivergenceError(const std::string& what) : NumericError(what) {}
};

/// An LRP denominator was exactly zero.
class DivisionHazardError : public NumericError {
 public:
  DivisionHazardError(int layer, long unit)
      : NumericError("zero LRP denominator at layer " + std::to_string(layer) + ", unit " +
                     std::to_string(unit)),
        layer_(layer),
        unit_(unit) {}

  int layer() const noexcept { return layer_; }
  long unit() const noexcept { return unit_; }

 private:
  int layer_;
  long unit_;
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorCategory::format, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCategory::io, what) {}
};

class GeometryError : public Error {
 public:
  explicit GeometryError(const std::string& what) : Error(ErrorCategory::geometry, what) {}
};

class DegenerateInputError : public Error {
 public:
  explicit DegenerateInputError(const std::string& what)
      : Error(ErrorCategory::degenerate, what) {}
};

}  // namespace bslb
