#pragma once

#include <stdexcept>
#include <string>

namespace ffdapt {

// Exception taxonomy mirrors the CLI exit-code map:
//   IoError → 1, ConfigError → 2, SkewUnachievableError → 3,
//   anything else at runtime → 4, RunMismatchError → 5.

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SkewUnachievableError : std::runtime_error {
  explicit SkewUnachievableError(const std::string& msg) : std::runtime_error(msg) {}
};

struct RunMismatchError : std::runtime_error {
  explicit RunMismatchError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ffdapt
