#pragma once

#include <stdexcept>
#include <string>

namespace jobvs {

/// Exit codes shared by every CLI command.
enum class ExitCode : int { ok = 0, usage = 1, data = 2, numerical = 3 };

/// Bad configuration, arguments or schema.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing or malformed files, shape mismatches, invalid volumes.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite losses, degenerate statistics.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace jobvs
