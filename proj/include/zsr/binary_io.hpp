#pragma once

// Little-endian primitive encoding shared by the SFV1 and SCK1 formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zsr/errors.hpp"

namespace zsr::io {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }

  // Bit pattern is copied verbatim, so NaN payloads and signed zeros survive.
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  void f32s(std::span<const float> vs) {
    for (float v : vs) f32(v);
  }

  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }

  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> data) : data_(std::move(data)) {}

  std::uint64_t offset() const { return pos_; }
  std::uint64_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  std::string_view bytes(std::uint64_t n, std::string_view what) {
    need(n, what);
    std::string_view out(data_.data() + pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t u32(std::string_view what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  float f32(std::string_view what) { return std::bit_cast<float>(u32(what)); }

  std::string str(std::string_view what) {
    const std::uint32_t n = u32(what);
    return std::string(bytes(n, what));
  }

  [[noreturn]] void fail(const std::string& message) const { throw FormatError(message, pos_); }

  void need(std::uint64_t n, std::string_view what) const {
    if (remaining() < n) {
      throw FormatError("truncated file while reading " + std::string(what), pos_);
    }
  }

 private:
  std::vector<char> data_;
  std::uint64_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const char> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span<const char>(text.data(), text.size()));
}

}  // namespace zsr::io
