#pragma once

#include <stdexcept>
#include <string>

namespace timnet {

/// Bad user input: malformed config, manifest, or arguments. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Failure while processing otherwise valid input (I/O, corrupt files,
/// numerical error states). Maps to CLI exit code 2.
class RuntimeFailure : public std::runtime_error {
public:
  explicit RuntimeFailure(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace timnet
