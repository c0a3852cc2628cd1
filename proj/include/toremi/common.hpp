// Shared error types. The CLI maps ValidationError to exit code 1 and
// RuntimeAbort to exit code 2; everything else is a bug.

#pragma once

#include <stdexcept>
#include <string>

namespace toremi {

// Bad inputs: malformed files, out-of-range config, violated preconditions.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Mid-run failures that invalidate the run: non-finite numbers, a labeling
// service that stays down after retries.
class RuntimeAbort : public std::runtime_error {
 public:
  explicit RuntimeAbort(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace toremi
