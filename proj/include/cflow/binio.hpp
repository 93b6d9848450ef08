#ifndef CFLOW_BINIO_HPP
#define CFLOW_BINIO_HPP

// Little-endian byte buffers for the CFDS and CFCK containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cflow/errors.hpp"

namespace cflow {

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void tag(std::string_view magic) { bytes(magic.data(), magic.size()); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  void expect_tag(std::string_view magic, const char* what) {
    need(magic.size(), what);
    if (std::memcmp(buf_.data() + pos_, magic.data(), magic.size()) != 0)
      throw FormatError(std::string("bad magic, not a ") + what + " file", pos_);
    pos_ += magic.size();
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  const std::uint8_t* bytes(std::size_t n, const char* what) {
    need(n, what);
    const std::uint8_t* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    const auto* p = bytes(n, what);
    return std::string(reinterpret_cast<const char*>(p), n);
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) throw FormatError(std::string("truncated file while reading ") + what, pos_);
  }

  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace cflow

#endif  // CFLOW_BINIO_HPP
