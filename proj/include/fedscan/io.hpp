#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fedscan/errors.hpp"

namespace fedscan {

/// Append-only little-endian byte buffer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }

  void u16(std::uint16_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v & 0xff));
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
  }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
      buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    }
  }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    }
  }

  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }

  const std::vector<std::uint8_t>& buffer() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Sequential little-endian reader that reports the byte offset of the
/// first unreadable field in every failure.
class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size)
      : data_(data), size_(size) {}

  explicit ByteReader(const std::vector<std::uint8_t>& buf)
      : ByteReader(buf.data(), buf.size()) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }
  bool at_end() const { return pos_ == size_; }

  std::uint8_t u8() {
    need(1, "byte");
    return data_[pos_++];
  }

  std::uint16_t u16() {
    need(2, "u16");
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) {
      v |= static_cast<std::uint16_t>(data_[pos_ + i]) << (8 * i);
    }
    pos_ += 2;
    return v;
  }

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  void raw(void* out, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }

  void expect_magic(const char* magic, std::size_t len) {
    need(len, "magic");
    if (std::memcmp(data_ + pos_, magic, len) != 0) {
      throw FormatError("bad magic, expected \"" + std::string(magic, len) +
                            "\"",
                        pos_);
    }
    pos_ += len;
  }

  void require_end() {
    if (!at_end()) {
      throw FormatError("trailing bytes after payload", pos_);
    }
  }

  void fail(const std::string& message) const {
    throw FormatError(message, pos_);
  }

 private:
  void need(std::size_t n, const char* what) {
    if (size_ - pos_ < n) {
      throw FormatError(std::string("truncated file while reading ") + what,
                        pos_);
    }
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path + " for reading");
  }
  in.seekg(0, std::ios::end);
  const std::streamoff len = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
  if (len > 0 &&
      !in.read(reinterpret_cast<char*>(buf.data()), len)) {
    throw IoError("failed to read " + path);
  }
  return buf;
}

inline void write_file_bytes(const std::string& path,
                             const std::vector<std::uint8_t>& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path + " for writing");
  }
  if (!buf.empty() &&
      !out.write(reinterpret_cast<const char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size()))) {
    throw IoError("failed to write " + path);
  }
  out.flush();
  if (!out) {
    throw IoError("failed to write " + path);
  }
}

inline std::string read_file_text(const std::string& path) {
  const std::vector<std::uint8_t> buf = read_file_bytes(path);
  return std::string(buf.begin(), buf.end());
}

inline void write_file_text(const std::string& path, const std::string& text) {
  std::vector<std::uint8_t> buf(text.begin(), text.end());
  write_file_bytes(path, buf);
}

}  // namespace fedscan
