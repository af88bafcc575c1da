#pragma once

#include <stdexcept>
#include <string>

namespace car {

/// Precondition check; throws std::invalid_argument with the given message.
inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// Runtime failure (I/O, format, environment).
[[noreturn]] inline void fail(const std::string& msg) { throw std::runtime_error(msg); }

}  // namespace car
