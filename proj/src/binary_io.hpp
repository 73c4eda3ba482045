#pragma once

// Little-endian binary helpers shared by the HXC1/HXM1/HXB1/MLP1 codecs.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "spectral_codec/error.hpp"

namespace spectral_codec::detail {

template <typename T>
T byteswap_if_big(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return value;
  }
}

class Writer {
 public:
  void magic(std::string_view m) { buf_.insert(buf_.end(), m.begin(), m.end()); }
  void bytes(const void* p, std::size_t n) {
    auto c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void put(T value) {
    value = byteswap_if_big(value);
    bytes(&value, sizeof(T));
  }
  void u8(std::uint8_t v) { put(v); }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void f32(double v) { put(static_cast<float>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  const std::vector<char>& buffer() const { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  static Reader from_file(const std::filesystem::path& path);
  explicit Reader(std::vector<char> data, std::string name)
      : data_(std::move(data)), name_(std::move(name)) {}

  void expect_magic(std::string_view m);
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return byteswap_if_big(v);
  }
  std::uint8_t u8() { return get<std::uint8_t>(); }
  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  double f32() { return static_cast<double>(get<float>()); }
  std::string str();

  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& name() const { return name_; }
  void need(std::size_t n) const;

 private:
  std::vector<char> data_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace spectral_codec::detail
