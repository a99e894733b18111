#pragma once

#include <charconv>
#include <string>

namespace ambiseg {

/// Shortest round-trip decimal form, '.' separator regardless of locale.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace ambiseg
