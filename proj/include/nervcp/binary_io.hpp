#pragma once

// Little-endian byte buffers with a trailing CRC32, shared by the key and
// model containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "nervcp/errors.hpp"

namespace nervcp::binary {

static_assert(std::endian::native == std::endian::little,
              "container blobs are written with native little-endian floats");

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename T>
  void pod(T v) {
    bytes(&v, sizeof(T));
  }
  void u8(std::uint8_t v) { pod(v); }
  void u16(std::uint16_t v) { pod(v); }
  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void f32(float v) { pod(v); }
  void f64(double v) { pod(v); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void magic(std::string_view m) { bytes(m.data(), m.size()); }

  std::vector<std::uint8_t> finish() && {
    const std::uint32_t crc = crc32_of(buf_);
    u32(crc);
    return std::move(buf_);
  }
  std::size_t size() const { return buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::uint8_t u8() { return pod<std::uint8_t>(); }
  std::uint16_t u16() { return pod<std::uint16_t>(); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  float f32() { return pod<float>(); }
  double f64() { return pod<double>(); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError("unexpected end of payload");
  }
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

/// Validates magic, version and trailing CRC32 of a container. Returns the
/// payload that follows the version field (CRC excluded).
inline std::span<const std::uint8_t> open_container(std::span<const std::uint8_t> file,
                                                    std::string_view magic,
                                                    std::uint16_t max_version,
                                                    std::uint16_t& version) {
  const std::size_t header = magic.size() + sizeof(std::uint16_t);
  if (file.size() < magic.size() ||
      std::memcmp(file.data(), magic.data(), magic.size()) != 0) {
    if (file.size() < header + 4) throw ChecksumError("file too short");
    throw FormatError("bad magic, expected " + std::string(magic));
  }
  if (file.size() < header + 4) throw ChecksumError("file truncated");
  std::memcpy(&version, file.data() + magic.size(), sizeof(version));
  if (version == 0 || version > max_version) {
    throw FormatVersionError("unsupported version " + std::to_string(version) +
                             " (this build reads up to " + std::to_string(max_version) + ")");
  }
  std::uint32_t stored = 0;
  std::memcpy(&stored, file.data() + file.size() - 4, 4);
  if (crc32_of(file.first(file.size() - 4)) != stored) {
    throw ChecksumError("CRC32 mismatch");
  }
  return file.subspan(header, file.size() - header - 4);
}

}  // namespace nervcp::binary
