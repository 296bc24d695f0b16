#pragma once

#include <stdexcept>
#include <string>

namespace tda {

// Invalid inputs or configuration: dimension mismatches, bad labels,
// unsupported method/prerequisite combinations, malformed files.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Numerical failure during an otherwise valid computation: diverging
// training or LiSSA recursion, non-finite eigenvalues, zero-norm vectors
// under a cosine.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem and serialization failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tda
