#pragma once

#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace sagate {

/// Base class for every error thrown by the library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeMismatch : Error {
  using Error::Error;
};
struct NonFinite : Error {
  using Error::Error;
};
struct NotScalar : Error {
  using Error::Error;
};
struct DetachedRoot : Error {
  using Error::Error;
};
struct DegenerateOutput : Error {
  using Error::Error;
};
struct UnknownVariant : Error {
  using Error::Error;
};
struct NoGateEnabled : Error {
  using Error::Error;
};
struct AllInvalid : Error {
  using Error::Error;
};
struct NonPositiveDepth : Error {
  using Error::Error;
};
struct RecipeInfeasible : Error {
  using Error::Error;
};
struct AllIgnored : Error {
  using Error::Error;
};
struct Divergence : Error {
  using Error::Error;
};
struct EmptyMatrix : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

namespace detail {
inline bool& nancheck_flag() {
  static bool enabled = [] {
    const char* v = std::getenv("SAGATE_DEBUG_NANCHECK");
    return v != nullptr && v[0] == '1';
  }();
  return enabled;
}
}  // namespace detail

/// When enabled, every primitive validates its output for NaN/Inf and
/// throws NonFinite instead of propagating silently. Also switched on by
/// the environment variable SAGATE_DEBUG_NANCHECK=1.
inline void set_nancheck(bool on) { detail::nancheck_flag() = on; }
inline bool nancheck_enabled() { return detail::nancheck_flag(); }

}  // namespace sagate
