#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace savp {

using Shape = std::vector<int64_t>;

namespace detail {

template <typename... Args>
std::string str(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << args);
  return oss.str();
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace detail

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

// Thrown on contract violations: shape mismatches, domain errors, bad config.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define SAVP_CHECK(cond, ...)                          \
  do {                                                 \
    if (!(cond)) throw ::savp::Error(::savp::detail::str(__VA_ARGS__)); \
  } while (0)

}  // namespace savp
