#pragma once

#include <stdexcept>
#include <string>

namespace mbgdd {

/// Shapes or sizes of operands do not agree.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed file contents (bad magic, truncated payload, ...).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid run configuration or option value.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A loss or iterate became non-finite during an iterative procedure.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int iteration)
      : std::runtime_error(what + " (iteration " + std::to_string(iteration) + ")"),
        iteration_(iteration) {}

  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw DimensionError(message);
}

}  // namespace detail
}  // namespace mbgdd
