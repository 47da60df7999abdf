#pragma once

#include <stdexcept>
#include <string>

namespace otafl {

// Bad shapes, empty inputs, out-of-range parameters.
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Antenna layout violates the aperture / minimum-spacing constraints.
struct InfeasibleLayout : std::domain_error {
  using std::domain_error::domain_error;
};

// |m^H h_k| too small for zero-forcing to be meaningful.
struct DegenerateChannel : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unknown keys, unparsable values, or configs that violate a module invariant.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename E>
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw E(msg);
}

}  // namespace detail
}  // namespace otafl
