#pragma once

// Little-endian binary writer and reader over a byte buffer.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace spg::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Truncated or malformed input, or an unsupported magic/version.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

class Writer {
 public:
  template <class T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void str(std::string_view s) {
    put<std::uint64_t>(s.size());
    raw(s);
  }
  template <class T>
  void array(std::span<const T> values) {
    put<std::uint64_t>(values.size());
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    bytes_.insert(bytes_.end(), p, p + values.size_bytes());
  }

  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
  void save(const std::filesystem::path& path) const { write_file(path, bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}
  static Reader load(const std::filesystem::path& path) { return Reader(read_file(path)); }

  template <class T>
    requires std::is_arithmetic_v<T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }
  std::string raw(std::size_t n) {
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  std::string str() { return raw(checked_count(get<std::uint64_t>(), 1)); }
  template <class T>
  std::vector<T> array() {
    const auto n = checked_count(get<std::uint64_t>(), sizeof(T));
    std::vector<T> out(n);
    if (n > 0) std::memcpy(out.data(), take(n * sizeof(T)), n * sizeof(T));
    return out;
  }

  bool at_end() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  const std::uint8_t* take(std::size_t n) {
    if (n > remaining()) throw FormatError("unexpected end of file");
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t checked_count(std::uint64_t n, std::size_t elem) const {
    if (n > remaining() / elem) throw FormatError("length field exceeds file size");
    return static_cast<std::size_t>(n);
  }

  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace spg::io
