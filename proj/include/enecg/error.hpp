#pragma once

#include <stdexcept>
#include <string>

namespace enecg {

// Every error carries a stable machine-readable class name; the CLI maps the
// class to an exit code.
class Error : public std::runtime_error {
 public:
  Error(const char* error_class, const std::string& what)
      : std::runtime_error(what), class_(error_class) {}
  const char* error_class() const noexcept { return class_; }

 private:
  const char* class_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error("dimension_error", what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("usage_error", what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse_error", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config_error", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io_error", what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric_error", what) {}
};

class NotApplicableError : public Error {
 public:
  explicit NotApplicableError(const std::string& what) : Error("not_applicable", what) {}
};

}  // namespace enecg
