#include "circuitlab/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "circuitlab/errors.hpp"
#include "circuitlab/tensor.hpp"

namespace circuitlab::io {

void ByteWriter::u16(std::uint16_t v) {
  for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
  if (remaining() < n) throw DataError("truncated binary input");
  auto s = bytes_.subspan(pos_, n);
  pos_ += n;
  return s;
}
std::uint8_t ByteReader::u8() { return raw(1)[0]; }
std::uint16_t ByteReader::u16() {
  auto b = raw(2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
std::uint32_t ByteReader::u32() {
  auto b = raw(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}
std::uint64_t ByteReader::u64() {
  auto b = raw(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

void ContainerWriter::add_f64(std::string name, std::span<const double> values) {
  sections_.push_back({std::move(name), 1, {values.begin(), values.end()}, {}, {}});
}
void ContainerWriter::add_u64(std::string name, std::span<const std::uint64_t> values) {
  sections_.push_back({std::move(name), 2, {}, {values.begin(), values.end()}, {}});
}
void ContainerWriter::add_string(std::string name, std::string_view text) {
  sections_.push_back({std::move(name), 3, {}, {}, std::string(text)});
}

std::vector<std::uint8_t> ContainerWriter::serialize() const {
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kMagic), sizeof(kMagic)});
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(kind_));
  w.u32(static_cast<std::uint32_t>(sections_.size()));
  for (const auto& s : sections_) {
    w.u16(static_cast<std::uint16_t>(s.name.size()));
    w.str(s.name);
    w.u8(s.type);
    switch (s.type) {
      case 1:
        w.u64(s.f64.size());
        for (double v : s.f64) w.f64(v);
        break;
      case 2:
        w.u64(s.u64.size());
        for (auto v : s.u64) w.u64(v);
        break;
      default:
        w.u64(s.bytes.size());
        w.str(s.bytes);
        break;
    }
  }
  const auto checksum = fnv1a(std::span<const std::uint8_t>(w.bytes()));
  w.u64(checksum);
  return w.take();
}

void ContainerWriter::write(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  write_file_atomic(path, bytes);
}

Container Container::parse(std::span<const std::uint8_t> bytes, Kind expected) {
  if (bytes.size() < sizeof(kMagic) + 12 + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a circuitlab container (bad magic)");
  const auto body = bytes.first(bytes.size() - 8);
  ByteReader tail(bytes.last(8));
  if (tail.u64() != fnv1a(body)) throw DataError("container checksum mismatch");

  ByteReader r(body);
  r.raw(sizeof(kMagic));
  const auto version = r.u32();
  if (version != kFormatVersion)
    throw DataError("unsupported container version " + std::to_string(version));
  const auto kind = r.u32();
  if (kind != static_cast<std::uint32_t>(expected))
    throw DataError("container holds kind " + std::to_string(kind) + ", expected " +
                    std::to_string(static_cast<std::uint32_t>(expected)));
  Container c;
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto name_len = r.u16();
    auto name_bytes = r.raw(name_len);
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto type = r.u8();
    const auto count = r.u64();
    if (type == 1) {
      if (count > r.remaining() / 8) throw DataError("truncated section " + name);
      std::vector<double> v(count);
      for (auto& x : v) x = r.f64();
      c.f64_[name] = std::move(v);
    } else if (type == 2) {
      if (count > r.remaining() / 8) throw DataError("truncated section " + name);
      std::vector<std::uint64_t> v(count);
      for (auto& x : v) x = r.u64();
      c.u64_[name] = std::move(v);
    } else if (type == 3) {
      auto b = r.raw(count);
      c.text_[name] = std::string(b.begin(), b.end());
    } else {
      throw DataError("unknown section type in " + name);
    }
  }
  return c;
}

Container Container::read(const std::filesystem::path& path, Kind expected) {
  const auto bytes = read_file(path);
  try {
    return parse(bytes, expected);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

bool Container::has(const std::string& name) const {
  return f64_.contains(name) || u64_.contains(name) || text_.contains(name);
}

const std::vector<double>& Container::f64(const std::string& name) const {
  auto it = f64_.find(name);
  if (it == f64_.end()) throw DataError("missing f64 section '" + name + "'");
  return it->second;
}

const std::vector<std::uint64_t>& Container::u64(const std::string& name) const {
  auto it = u64_.find(name);
  if (it == u64_.end()) throw DataError("missing u64 section '" + name + "'");
  return it->second;
}

std::uint64_t Container::scalar(const std::string& name) const {
  const auto& v = u64(name);
  if (v.size() != 1) throw DataError("section '" + name + "' is not a scalar");
  return v[0];
}

const std::string& Container::text(const std::string& name) const {
  auto it = text_.find(name);
  if (it == text_.end()) throw DataError("missing text section '" + name + "'");
  return it->second;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                                        text.size()));
}

}  // namespace circuitlab::io
