#include "mvcnet/binary_io.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

#include "mvcnet/errors.hpp"

namespace mvcnet {

std::uint64_t ByteReader::get(int width) {
  if (remaining() < static_cast<std::size_t>(width)) {
    throw ValidationError("binary data truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
  }
  pos_ += width;
  return v;
}

std::uint8_t ByteReader::u8() { return static_cast<std::uint8_t>(get(1)); }
std::uint32_t ByteReader::u32() { return static_cast<std::uint32_t>(get(4)); }
std::uint64_t ByteReader::u64() { return get(8); }

std::string_view ByteReader::raw(std::size_t n) {
  if (remaining() < n) throw ValidationError("binary data truncated at byte " + std::to_string(pos_));
  const std::string_view out = in_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("failed writing '" + path.string() + "'");
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string checksum_hex(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

}  // namespace mvcnet
