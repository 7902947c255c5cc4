#ifndef EKD_ERROR_HPP
#define EKD_ERROR_HPP

#include <stdexcept>
#include <string>

namespace ekd {

enum class ErrorCode {
  invalid_argument,
  empty_input,
  non_finite,
  shape_mismatch,
  io,
  bad_magic,
  unsupported_version,
  truncated,
  label_out_of_range,
  parse,
  divergence,
};

inline const char *to_string(ErrorCode code) {
  switch (code) {
  case ErrorCode::invalid_argument: return "invalid_argument";
  case ErrorCode::empty_input: return "empty_input";
  case ErrorCode::non_finite: return "non_finite";
  case ErrorCode::shape_mismatch: return "shape_mismatch";
  case ErrorCode::io: return "io";
  case ErrorCode::bad_magic: return "bad_magic";
  case ErrorCode::unsupported_version: return "unsupported_version";
  case ErrorCode::truncated: return "truncated";
  case ErrorCode::label_out_of_range: return "label_out_of_range";
  case ErrorCode::parse: return "parse";
  case ErrorCode::divergence: return "divergence";
  }
  return "unknown";
}

/// Every failure in the library surfaces as this exception. The code lets
/// callers (the CLI exit-code mapping, the file loaders' tests) tell
/// failure classes apart without matching on message text.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

namespace detail {
[[noreturn]] inline void fail(ErrorCode code, const std::string &what) {
  throw Error(code, what);
}
inline void require(bool cond, ErrorCode code, const std::string &what) {
  if (!cond)
    fail(code, what);
}
} // namespace detail

} // namespace ekd

#endif // EKD_ERROR_HPP
