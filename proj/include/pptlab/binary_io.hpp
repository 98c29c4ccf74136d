#pragma once

// Little-endian framing shared by the dataset and checkpoint containers.
//
// Container layout:
//   magic[8] | u32 format_version | u32 json_len | json bytes | u64 payload_len |
//   u32 payload_crc32 | u32 header_crc32 | payload
// header_crc32 covers every byte before it.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pptlab::io {

class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> v);
  void u32s(std::span<const std::uint32_t> v);
  void bytes(std::string_view s);
  const std::vector<unsigned char>& buffer() const { return buf_; }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> data) : data_(data) {}
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void f64s(std::span<double> out);
  void u32s(std::span<std::uint32_t> out);
  std::string bytes(std::size_t n);
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  std::span<const unsigned char> data_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32(std::span<const unsigned char> data);

struct Container {
  std::uint32_t format_version = 0;
  std::string json;
  std::vector<unsigned char> payload;
};

void write_container(const std::filesystem::path& path, std::string_view magic, const Container& c);
// Verifies magic, version (must be <= max_version), both CRCs and lengths.
Container read_container(const std::filesystem::path& path, std::string_view magic, std::uint32_t max_version);

std::vector<unsigned char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const unsigned char> data);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace pptlab::io
