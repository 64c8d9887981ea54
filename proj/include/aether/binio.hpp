#pragma once

// Little-endian helpers shared by the binary formats (AEF1, TEV1, AETH1).

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "aether/error.hpp"

namespace aether::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::vector<char> read_file_bytes(const std::string& path);

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::string_view bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  const std::vector<char>& bytes() const { return buf_; }
  void reserve(std::size_t n) { buf_.reserve(n); }

  /// Writes the buffer to path, replacing any existing file.
  void save(const std::string& path) const;

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string source) : buf_(std::move(bytes)), source_(std::move(source)) {}

  static Reader from_file(const std::string& path);

  std::size_t remaining() const { return buf_.size() - pos_; }
  std::size_t position() const { return pos_; }
  const std::string& source() const { return source_; }

  bool has(std::size_t n) const { return remaining() >= n; }

  /// Reads a T; throws FormatError(kind) when fewer than sizeof(T) bytes remain.
  template <typename T>
  T get(FormatError::Kind kind = FormatError::Kind::MalformedHeader) {
    need(sizeof(T), kind);
    T value;
    std::memcpy(&value, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n, FormatError::Kind kind = FormatError::Kind::MalformedHeader) {
    need(n, kind);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  const char* take(std::size_t n, FormatError::Kind kind) {
    need(n, kind);
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  void need(std::size_t n, FormatError::Kind kind) const {
    if (!has(n)) {
      throw FormatError(kind, source_ + ": unexpected end of file at byte " + std::to_string(pos_) + " (need " +
                                  std::to_string(n) + " more bytes)");
    }
  }

  std::vector<char> buf_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace aether::binio
