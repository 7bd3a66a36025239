#pragma once

// Little-endian byte encoding shared by the checkpoint and dataset formats.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace mvcnet {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::string_view bytes) { out_.append(bytes); }
  /// u32 byte length followed by the bytes.
  void blob(std::string_view bytes) {
    u32(static_cast<std::uint32_t>(bytes.size()));
    raw(bytes);
  }

  const std::string& bytes() const { return out_; }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  std::string out_;
};

/// Throws ValidationError on truncated input.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : in_(bytes) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view raw(std::size_t n);
  std::string_view blob() { return raw(u32()); }

  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::uint64_t get(int width);

  std::string_view in_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
/// Throws ValidationError when the file cannot be written.
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// 64-bit FNV-1a, printed as 16 hex digits by checksum_hex.
std::uint64_t fnv1a64(std::string_view bytes);
std::string checksum_hex(std::string_view bytes);

}  // namespace mvcnet
