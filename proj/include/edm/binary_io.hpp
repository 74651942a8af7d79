#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace edm::bin {

// Little-endian encoding helpers shared by the manifest and checkpoint files.

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    v = to_little(v);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void put_f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void put_bytes(std::string_view s) { buf_.append(s); }

  const std::string& data() const { return buf_; }
  std::size_t size() const { return buf_.size(); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

  template <typename T>
  bool get(T& out) {
    if (remaining() < sizeof(T)) return false;
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    out = to_little(v);
    return true;
  }
  bool get_f32(float& out) {
    std::uint32_t bits = 0;
    if (!get(bits)) return false;
    out = std::bit_cast<float>(bits);
    return true;
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

// FNV-1a, 64-bit.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace edm::bin
