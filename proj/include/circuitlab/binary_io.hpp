#pragma once

// Versioned binary container for model weights, cells, worlds and autoencoders.
//
// Layout (all integers and floats little-endian):
//   magic[8] = "CIRCLAB\0" | u32 format_version | u32 kind | u32 n_sections
//   per section: u16 name_len | name | u8 type (1=f64, 2=u64, 3=bytes) | u64 count | payload
//   trailing u64 FNV-1a checksum over every preceding byte

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace circuitlab::io {

inline constexpr char kMagic[8] = {'C', 'I', 'R', 'C', 'L', 'A', 'B', '\0'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class Kind : std::uint32_t { kModel = 1, kCells = 2, kWorld = 3, kSae = 4 };

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void raw(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  void str(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::span<const std::uint8_t> raw(std::size_t n);
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

class ContainerWriter {
 public:
  explicit ContainerWriter(Kind kind) : kind_(kind) {}
  void add_f64(std::string name, std::span<const double> values);
  void add_u64(std::string name, std::span<const std::uint64_t> values);
  void add_scalar(std::string name, std::uint64_t value) { add_u64(std::move(name), {&value, 1}); }
  void add_string(std::string name, std::string_view text);
  std::vector<std::uint8_t> serialize() const;
  void write(const std::filesystem::path& path) const;

 private:
  struct Section {
    std::string name;
    std::uint8_t type;
    std::vector<double> f64;
    std::vector<std::uint64_t> u64;
    std::string bytes;
  };
  Kind kind_;
  std::vector<Section> sections_;
};

class Container {
 public:
  static Container parse(std::span<const std::uint8_t> bytes, Kind expected);
  static Container read(const std::filesystem::path& path, Kind expected);

  bool has(const std::string& name) const;
  const std::vector<double>& f64(const std::string& name) const;
  const std::vector<std::uint64_t>& u64(const std::string& name) const;
  std::uint64_t scalar(const std::string& name) const;
  const std::string& text(const std::string& name) const;

 private:
  std::map<std::string, std::vector<double>> f64_;
  std::map<std::string, std::vector<std::uint64_t>> u64_;
  std::map<std::string, std::string> text_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace circuitlab::io
