#pragma once

#include <stdexcept>
#include <string>

namespace mvcount {

/// Raised for contract violations: shape/tag mismatches, bad configs, malformed files.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Throws mvcount::Error with `message` when `condition` is false.
inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error(message);
}

}  // namespace mvcount
