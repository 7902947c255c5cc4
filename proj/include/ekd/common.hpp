#ifndef EKD_COMMON_HPP
#define EKD_COMMON_HPP

#include <cstdint>
#include <string>
#include <string_view>

#include "ekd/error.hpp"

namespace ekd {

/// Energy-percentile group of a training sample.
enum class Bucket : std::uint8_t { low, else_, high };

inline std::string_view to_string(Bucket b) {
  switch (b) {
  case Bucket::low: return "LOW";
  case Bucket::else_: return "ELSE";
  case Bucket::high: return "HIGH";
  }
  return "?";
}

inline Bucket parse_bucket(std::string_view s) {
  if (s == "LOW") return Bucket::low;
  if (s == "ELSE") return Bucket::else_;
  if (s == "HIGH") return Bucket::high;
  detail::fail(ErrorCode::parse, "unknown bucket '" + std::string(s) + "'");
}

/// Two-class label mixture: weight `lambda` on class a, 1 - lambda on b.
/// A plain label is {l, l, 1.0}.
struct LabelMix {
  std::uint16_t a = 0;
  std::uint16_t b = 0;
  double lambda = 1.0;

  static LabelMix hard(std::uint16_t label) { return {label, label, 1.0}; }

  friend bool operator==(const LabelMix &, const LabelMix &) = default;
};

} // namespace ekd

#endif // EKD_COMMON_HPP
