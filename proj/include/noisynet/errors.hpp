#pragma once

#include <stdexcept>
#include <string>

namespace noisynet {

/// Error categories. The CLI maps each one to a fixed exit code.
enum class ErrorKind { Config, Data, Numeric, Shape, Fit };

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Data: return "data";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Fit: return "fit";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};
struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorKind::Shape, what) {}
};
struct FitError : Error {
  explicit FitError(const std::string& what) : Error(ErrorKind::Fit, what) {}
};

}  // namespace noisynet
