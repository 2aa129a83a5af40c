#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "mixuplr/error.hpp"

namespace mixuplr {

/// Every float written to CSV/JSON/SVG goes through here: 6 significant digits.
inline std::string format_float(double v) {
  if (v == 0.0) return "0";  // folds -0
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// v rounded to 6 significant digits, for values placed into JSON documents.
inline double round6(double v) {
  if (!std::isfinite(v)) return v;
  return std::stod(format_float(v));
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    auto cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    if (!cell.empty() && cell.back() == '\r') cell.remove_suffix(1);
    out.emplace_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw ConfigError("not a number: '" + std::string(s) + "'");
  return v;
}

}  // namespace mixuplr
