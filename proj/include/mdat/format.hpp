#pragma once

// Locale-independent number formatting and a JSON writer that prints every
// floating-point value with 17 significant digits.

#include <array>
#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace mdat {

using Json = nlohmann::ordered_json;

inline std::string format_double(double v, int significant = 17) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v,
                                 std::chars_format::general, significant);
  return std::string(buf.data(), res.ptr);
}

/// Shortest representation that parses back to the same double.
inline std::string format_roundtrip(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

namespace detail {

inline void write_json_value(std::ostream& os, const Json& j, int indent, int depth) {
  const auto pad = [&](int d) {
    if (indent > 0) os << '\n' << std::string(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        os << "{}";
        return;
      }
      os << '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) os << ',';
        first = false;
        pad(depth + 1);
        os << Json(it.key()).dump() << (indent > 0 ? ": " : ":");
        write_json_value(os, it.value(), indent, depth + 1);
      }
      pad(depth);
      os << '}';
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        os << "[]";
        return;
      }
      os << '[';
      bool first = true;
      for (const auto& v : j) {
        if (!first) os << ',';
        first = false;
        pad(depth + 1);
        write_json_value(os, v, indent, depth + 1);
      }
      pad(depth);
      os << ']';
      return;
    }
    case Json::value_t::number_float: {
      const double v = j.get<double>();
      // JSON has no inf/nan; emit null like nlohmann does.
      os << (std::isfinite(v) ? format_double(v, 17) : std::string("null"));
      return;
    }
    default:
      os << j.dump();
      return;
  }
}

}  // namespace detail

inline void write_json(std::ostream& os, const Json& j, int indent = 2) {
  detail::write_json_value(os, j, indent, 0);
  os << '\n';
}

inline std::string to_json_string(const Json& j, int indent = 2) {
  std::ostringstream os;
  write_json(os, j, indent);
  return os.str();
}

}  // namespace mdat
