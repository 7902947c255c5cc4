#ifndef EKD_TEXT_HPP
#define EKD_TEXT_HPP

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "ekd/error.hpp"

namespace ekd::text {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos)
    return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::vector<std::string_view> lines(std::string_view s) {
  auto out = split(s, '\n');
  if (!out.empty() && out.back().empty())
    out.pop_back();
  for (auto &l : out)
    if (!l.empty() && l.back() == '\r')
      l.remove_suffix(1);
  return out;
}

inline double parse_double(std::string_view s, std::string_view what = "value") {
  s = trim(s);
  double v = 0.0;
  // from_chars rejects a leading '+', which hand-written configs use.
  if (!s.empty() && s.front() == '+')
    s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    detail::fail(ErrorCode::parse,
                 "cannot parse " + std::string(what) + " '" + std::string(s) + "'");
  return v;
}

template <typename Int>
Int parse_int(std::string_view s, std::string_view what = "value") {
  s = trim(s);
  if (!s.empty() && s.front() == '+')
    s.remove_prefix(1);
  Int v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    detail::fail(ErrorCode::parse,
                 "cannot parse " + std::string(what) + " '" + std::string(s) + "'");
  return v;
}

/// Shortest decimal form that round-trips the double exactly.
inline std::string fmt_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

/// printf-style %.<digits>g.
inline std::string fmt_sig(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

} // namespace ekd::text

#endif // EKD_TEXT_HPP
