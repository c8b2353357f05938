#pragma once

#include <stdexcept>
#include <string>

namespace pmil {

// Shape/dimension violations in tensor ops. Message names both shapes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Config file problems (bad syntax, unknown keys, invalid values).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset / bag file problems.
class DataError : public std::runtime_error {
 public:
  enum class Kind { Generic, BadMagic, Truncated, BadVersion, NotFound };

  DataError(Kind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  explicit DataError(const std::string& msg)
      : std::runtime_error(msg), kind_(Kind::Generic) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Non-finite losses or gradients during optimization.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// AUROC is undefined when only one class is present.
class AurocUndefinedError : public std::runtime_error {
 public:
  explicit AurocUndefinedError(const std::string& msg)
      : std::runtime_error(msg) {}
};

}  // namespace pmil
