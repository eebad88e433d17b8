#include "adaptlm/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <zlib.h>

#include "adaptlm/error.hpp"

namespace adaptlm {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::io: return "io";
    case ErrorCode::format: return "format";
    case ErrorCode::fingerprint_mismatch: return "fingerprint_mismatch";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::out_of_range: return "out_of_range";
  }
  return "unknown";
}

static_assert(std::endian::native == std::endian::little,
              "binary formats are written with native little-endian stores");

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::raw(std::string_view bytes) {
  bytes_.insert(bytes_.end(), bytes.begin(), bytes.end());
}

void ByteWriter::string(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s);
}

void ByteWriter::f32_array(std::span<const float> values) {
  const auto old = bytes_.size();
  bytes_.resize(old + values.size_bytes());
  std::memcpy(bytes_.data() + old, values.data(), values.size_bytes());
}

void ByteWriter::u32_array(std::span<const std::uint32_t> values) {
  const auto old = bytes_.size();
  bytes_.resize(old + values.size_bytes());
  std::memcpy(bytes_.data() + old, values.data(), values.size_bytes());
}

void ByteReader::require(std::size_t n, std::string_view what) const {
  if (remaining() < n) {
    throw FormatError(fmt::format("truncated input while reading {} ({} bytes needed, {} left)",
                                  what, n, remaining()),
                      offset_);
  }
}

std::uint8_t ByteReader::u8() {
  require(1, "u8");
  return bytes_[offset_++];
}

std::uint32_t ByteReader::u32() {
  require(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[offset_ + i]) << (8 * i);
  offset_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  require(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[offset_ + i]) << (8 * i);
  offset_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::raw(std::size_t n) {
  require(n, "byte string");
  std::string s(reinterpret_cast<const char*>(bytes_.data() + offset_), n);
  offset_ += n;
  return s;
}

std::string ByteReader::string() {
  const auto n = u32();
  return raw(n);
}

void ByteReader::f32_array(std::span<float> out) {
  require(out.size_bytes(), "f32 array");
  std::memcpy(out.data(), bytes_.data() + offset_, out.size_bytes());
  offset_ += out.size_bytes();
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, fmt::format("cannot open '{}' for reading", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, fmt::format("cannot open '{}' for writing", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::io, fmt::format("short write to '{}'", path.string()));
}

std::string read_text_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in bounded pieces.
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto piece = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = ::crc32(crc, bytes.data() + done, piece);
    done += piece;
  }
  return static_cast<std::uint32_t>(crc);
}

void Fnv1a::update(std::string_view bytes) {
  for (const char c : bytes) {
    hash_ ^= static_cast<std::uint8_t>(c);
    hash_ *= 0x100000001b3ULL;
  }
}

void Fnv1a::update_u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    hash_ ^= static_cast<std::uint8_t>(v >> (8 * i));
    hash_ *= 0x100000001b3ULL;
  }
}

void Fnv1a::update_u64(std::uint64_t v) {
  update_u32(static_cast<std::uint32_t>(v));
  update_u32(static_cast<std::uint32_t>(v >> 32));
}

std::string to_hex(std::uint64_t v) { return fmt::format("{:016x}", v); }

}  // namespace adaptlm
