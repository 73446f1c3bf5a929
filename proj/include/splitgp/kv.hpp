#pragma once

// Flat key=value text blocks shared by the hyperparameter and experiment
// config formats. '#' starts a comment; blank lines are ignored.

#include <charconv>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "splitgp/errors.hpp"

namespace splitgp::kv {

using Map = std::map<std::string, std::string, std::less<>>;

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline Map parse(std::istream& in) {
  Map out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw DataError("line " + std::to_string(line_no) + ": expected key=value, got '" +
                      std::string(view) + "'");
    }
    const auto key = trim(view.substr(0, eq));
    if (key.empty()) throw DataError("line " + std::to_string(line_no) + ": empty key");
    out[std::string(key)] = std::string(trim(view.substr(eq + 1)));
  }
  return out;
}

inline Map parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse(in);
}

inline double to_double(std::string_view text, std::string_view what) {
  text = trim(text);
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw DataError(std::string(what) + ": not a number: '" + std::string(text) + "'");
  }
  return value;
}

inline long long to_integer(std::string_view text, std::string_view what) {
  text = trim(text);
  long long value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw DataError(std::string(what) + ": not an integer: '" + std::string(text) + "'");
  }
  return value;
}

inline std::vector<std::string> split_list(std::string_view text, char sep = ',') {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto pos = text.find(sep, start);
    const auto piece = trim(text.substr(start, pos == std::string_view::npos ? std::string_view::npos
                                                                             : pos - start));
    if (!piece.empty()) parts.emplace_back(piece);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

/// Shortest round-trip decimal representation of a double.
inline std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

}  // namespace splitgp::kv
