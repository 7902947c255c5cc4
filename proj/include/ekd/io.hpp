#ifndef EKD_IO_HPP
#define EKD_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ekd/error.hpp"

namespace ekd::io {

/// Little-endian byte sink for the binary formats (EKDS, EKDM, EKDL).
class ByteWriter {
public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }

  const std::vector<std::uint8_t> &bytes() const noexcept { return bytes_; }

private:
  template <typename U> void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i)
      bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void expect_magic(std::string_view m) {
    need(m.size());
    if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0)
      detail::fail(ErrorCode::bad_magic,
                   "bad magic: expected " + std::string(m));
    pos_ += m.size();
  }
  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

  /// Fails unless n more bytes are available. Lets loaders reject a short
  /// file before allocating for its declared payload.
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      detail::fail(ErrorCode::truncated, "truncated payload");
  }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  void expect_end() const {
    if (pos_ != bytes_.size())
      detail::fail(ErrorCode::parse, "trailing bytes after payload");
  }

private:
  template <typename U> U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    detail::fail(ErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_text(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    detail::fail(ErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path &path,
                       std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    detail::fail(ErrorCode::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out)
    detail::fail(ErrorCode::io, "write failed for " + path.string());
}

inline void write_text(const std::filesystem::path &path, std::string_view text) {
  write_file(path, {reinterpret_cast<const std::uint8_t *>(text.data()), text.size()});
}

/// FNV-1a, 64-bit. Used for parameter and dataset checksums.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
std::uint64_t fnv1a64_values(std::span<const T> values,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64({reinterpret_cast<const std::uint8_t *>(values.data()),
                  values.size_bytes()},
                 h);
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4)
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

/// `# key=value` comment lines, the header idiom shared by the CSV outputs
/// and the generation manifests.
inline std::string comment_header(
    std::span<const std::pair<std::string, std::string>> entries) {
  std::string out;
  for (const auto &[k, v] : entries)
    out += "# " + k + "=" + v + "\n";
  return out;
}

} // namespace ekd::io

#endif // EKD_IO_HPP
