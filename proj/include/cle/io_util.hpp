#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace cle {

/// Malformed or unreadable on-disk data (videos, manifests, checkpoints).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& s);
std::uint64_t parse_u64(const std::string& s);

std::vector<std::size_t> parse_size_list(const std::string& s);
std::string join_sizes(const std::vector<std::size_t>& v);

/// Writes through a sibling temp file and renames it into place, so readers
/// never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// Little-endian scalar packing.
void put_u16(std::string& out, std::uint16_t v);
void put_u32(std::string& out, std::uint32_t v);
void put_f32(std::string& out, float v);

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string what) : b_(bytes), what_(std::move(what)) {}
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  float f32();
  std::string bytes(std::size_t n);
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  const std::string& b_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace cle
