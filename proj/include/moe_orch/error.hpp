#pragma once

#include <stdexcept>
#include <string>

namespace moe_orch {

// Usage/config problems map to exit code 1, data/validation problems to 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public ValidationError {
 public:
  explicit ShapeError(const std::string& msg) : ValidationError(msg) {}
};

class CalibrationError : public ValidationError {
 public:
  explicit CalibrationError(const std::string& msg) : ValidationError(msg) {}
};

}  // namespace moe_orch
