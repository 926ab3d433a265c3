#pragma once

#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "json.hpp"

namespace moesim::detail {

// 9 significant digits round-trip any IEEE-754 binary32 value.
inline void append_float_array(std::string& out, std::span<const float> values) {
  out.push_back('[');
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out.push_back(',');
    fmt::format_to(std::back_inserter(out), "{:.9g}", values[i]);
  }
  out.push_back(']');
}

inline std::vector<float> read_float_array(const nlohmann::json& arr) {
  std::vector<float> out;
  out.reserve(arr.size());
  for (const auto& v : arr) out.push_back(static_cast<float>(v.get<double>()));
  return out;
}

}  // namespace moesim::detail
