#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cg3d/util/error.hpp"

namespace cg3d::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swaps");

// Append-only little-endian byte buffer.
class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void f32s(std::span<const float> v) { raw(v.data(), v.size_bytes()); }
  void str(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  const std::vector<char>& bytes() const noexcept { return bytes_; }
  std::vector<char> take() noexcept { return std::move(bytes_); }

 private:
  void raw(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    bytes_.insert(bytes_.end(), c, c + n);
  }
  std::vector<char> bytes_;
};

// Bounds-checked reader; every failure reports the current byte offset.
class ByteReader {
 public:
  explicit ByteReader(std::span<const char> data) : data_(data) {}

  void expect_magic(std::string_view m, std::string_view what) {
    need(m.size(), what);
    if (std::memcmp(data_.data() + pos_, m.data(), m.size()) != 0)
      throw FormatError(std::string(what) + ": bad magic, expected \"" + std::string(m) + "\"", pos_);
    pos_ += m.size();
  }
  std::uint32_t u32(std::string_view what) {
    std::uint32_t v;
    read(&v, sizeof v, what);
    return v;
  }
  float f32(std::string_view what) {
    float v;
    read(&v, sizeof v, what);
    return v;
  }
  void f32s(std::span<float> out, std::string_view what) { read(out.data(), out.size_bytes(), what); }
  std::string str(std::size_t n, std::string_view what) {
    need(n, what);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  void need(std::size_t n, std::string_view what) const {
    if (data_.size() - pos_ < n)
      throw FormatError(std::string(what) + ": truncated, need " + std::to_string(n) + " more bytes", pos_);
  }
  void read(void* out, std::size_t n, std::string_view what) {
    need(n, what);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }

  std::span<const char> data_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const char> bytes);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

}  // namespace cg3d::io
