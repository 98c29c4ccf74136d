#include "pptlab/binary_io.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

#include "pptlab/errors.hpp"

namespace pptlab::io {

static_assert(std::endian::native == std::endian::little, "container code assumes a little-endian host");

void ByteWriter::u32(std::uint32_t v) {
  unsigned char b[4];
  std::memcpy(b, &v, 4);
  buf_.insert(buf_.end(), b, b + 4);
}

void ByteWriter::u64(std::uint64_t v) {
  unsigned char b[8];
  std::memcpy(b, &v, 8);
  buf_.insert(buf_.end(), b, b + 8);
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::f64s(std::span<const double> v) {
  const auto* p = reinterpret_cast<const unsigned char*>(v.data());
  buf_.insert(buf_.end(), p, p + v.size_bytes());
}

void ByteWriter::u32s(std::span<const std::uint32_t> v) {
  const auto* p = reinterpret_cast<const unsigned char*>(v.data());
  buf_.insert(buf_.end(), p, p + v.size_bytes());
}

void ByteWriter::bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) throw ChecksumError("container truncated: need " + std::to_string(n) + " more bytes");
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v;
  std::memcpy(&v, data_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v;
  std::memcpy(&v, data_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

void ByteReader::f64s(std::span<double> out) {
  need(out.size_bytes());
  std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
  pos_ += out.size_bytes();
}

void ByteReader::u32s(std::span<std::uint32_t> out) {
  need(out.size_bytes());
  std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
  pos_ += out.size_bytes();
}

std::string ByteReader::bytes(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::uint32_t crc32(std::span<const unsigned char> data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < data.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
    crc = ::crc32(crc, data.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void write_container(const std::filesystem::path& path, std::string_view magic, const Container& c) {
  ByteWriter w;
  w.bytes(magic);
  w.u32(c.format_version);
  w.u32(static_cast<std::uint32_t>(c.json.size()));
  w.bytes(c.json);
  w.u64(c.payload.size());
  w.u32(crc32(c.payload));
  w.u32(crc32(w.buffer()));
  auto& buf = w.buffer();
  buf.insert(buf.end(), c.payload.begin(), c.payload.end());
  write_file(path, buf);
}

Container read_container(const std::filesystem::path& path, std::string_view magic, std::uint32_t max_version) {
  const auto raw = read_file(path);
  ByteReader r(raw);
  if (r.remaining() < magic.size() || r.bytes(magic.size()) != magic) {
    throw FormatError(path.string() + ": not a " + std::string(magic.substr(0, magic.find('\0'))) + " file");
  }
  Container c;
  c.format_version = r.u32();
  if (c.format_version == 0 || c.format_version > max_version) {
    throw VersionError(path.string() + ": unsupported format_version " + std::to_string(c.format_version) +
                       " (this build reads up to " + std::to_string(max_version) + ")");
  }
  const std::uint32_t json_len = r.u32();
  c.json = r.bytes(json_len);
  const std::uint64_t payload_len = r.u64();
  const std::uint32_t payload_crc = r.u32();
  const std::size_t header_len = raw.size() - r.remaining();
  const std::uint32_t header_crc = r.u32();
  if (crc32({raw.data(), header_len}) != header_crc) throw ChecksumError(path.string() + ": header checksum mismatch");
  if (r.remaining() != payload_len) {
    throw ChecksumError(path.string() + ": payload length " + std::to_string(r.remaining()) + " != recorded " +
                        std::to_string(payload_len));
  }
  c.payload.assign(raw.end() - static_cast<std::ptrdiff_t>(payload_len), raw.end());
  if (crc32(c.payload) != payload_crc) throw ChecksumError(path.string() + ": payload checksum mismatch");
  return c;
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return data;
}

void write_file(const std::filesystem::path& path, std::span<const unsigned char> data) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

std::string read_text(const std::filesystem::path& path) {
  const auto raw = read_file(path);
  return {raw.begin(), raw.end()};
}

std::string sha256_file(const std::filesystem::path& path) {
  const auto raw = read_file(path);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), raw.data(), raw.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw IoError("sha256 failed for " + path.string());
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

}  // namespace pptlab::io
