#pragma once

#include <stdexcept>
#include <string>

namespace invlearn {

// Bad shapes or malformed input (exit code 1 in the CLI).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Parameters or policies outside their admissible region (exit code 1).
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Enumeration or state space larger than the configured budget (exit code 2).
struct BudgetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Configuration the operation refuses to handle (exit code 2).
struct UnsupportedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace invlearn
