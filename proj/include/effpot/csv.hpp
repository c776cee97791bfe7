#pragma once

#include <charconv>
#include <string>

namespace effpot::csv {

// Shortest round-trip decimal representation; locale-free and byte-stable,
// which the reproducibility contract of the output files relies on.
inline std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace effpot::csv
