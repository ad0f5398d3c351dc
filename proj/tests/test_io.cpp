#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "circuitlab/binary_io.hpp"
#include "circuitlab/config.hpp"
#include "circuitlab/errors.hpp"

using namespace circuitlab;

TEST_CASE("container round trip") {
  io::ContainerWriter w(io::Kind::kCells);
  std::vector<double> xs = {1.5, -2.25, 1e-300};
  std::vector<std::uint64_t> ns = {0, 7, ~0ULL};
  w.add_f64("xs", xs);
  w.add_u64("ns", ns);
  w.add_scalar("one", 1);
  w.add_string("label", "hello");
  const auto bytes = w.serialize();
  CHECK(std::equal(bytes.begin(), bytes.begin() + 8, io::kMagic));
  const auto c = io::Container::parse(bytes, io::Kind::kCells);
  CHECK(c.f64("xs") == xs);
  CHECK(c.u64("ns") == ns);
  CHECK(c.scalar("one") == 1);
  CHECK(c.text("label") == "hello");
  CHECK_FALSE(c.has("missing"));
  CHECK_THROWS_AS(c.f64("missing"), DataError);
}

TEST_CASE("container rejects corruption") {
  io::ContainerWriter w(io::Kind::kModel);
  w.add_f64("x", std::vector<double>{1.0});
  auto bytes = w.serialize();
  CHECK_THROWS_AS(io::Container::parse(bytes, io::Kind::kCells), DataError);
  auto flipped = bytes;
  flipped[flipped.size() - 12] ^= 0x01;
  CHECK_THROWS_AS(io::Container::parse(flipped, io::Kind::kModel), DataError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(io::Container::parse(bad_magic, io::Kind::kModel), DataError);
  bytes.resize(bytes.size() / 2);
  CHECK_THROWS_AS(io::Container::parse(bytes, io::Kind::kModel), DataError);
}

TEST_CASE("atomic write leaves no temp file") {
  const auto dir = std::filesystem::temp_directory_path() / "circuitlab_io_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  io::write_file_atomic(dir / "a.txt", std::string_view("abc"));
  io::write_file_atomic(dir / "a.txt", std::string_view("defg"));
  const auto bytes = io::read_file(dir / "a.txt");
  CHECK(std::string(bytes.begin(), bytes.end()) == "defg");
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    (void)e;
    ++n;
  }
  CHECK(n == 1);
  CHECK_THROWS_AS(io::read_file(dir / "missing"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("key-value config") {
  const auto cfg = KeyValueConfig::parse("top = 1\n[model]\nd_model = 32\nlinear = true\n[world]\nlayers = 3, 4,5\nrate=0.25\n");
  CHECK(cfg.get_int("top", 0) == 1);
  CHECK(cfg.get_u64("model.d_model", 0) == 32);
  CHECK(cfg.get_bool("model.linear", false));
  CHECK(cfg.get_ints("world.layers", {}) == std::vector<std::int64_t>{3, 4, 5});
  CHECK(cfg.get_double("world.rate", 0) == 0.25);
  CHECK(cfg.get_double("world.absent", 9.0) == 9.0);
  CHECK_THROWS_AS(cfg.get_int("world.rate", 0), ConfigError);
  CHECK_THROWS_AS(cfg.get_bool("world.rate", false), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::parse("[broken\n"), ConfigError);

  auto a = KeyValueConfig::parse("[s]\nb=2\na=1\n");
  auto b = KeyValueConfig::parse("[s]\na=1\nb=2\n");
  CHECK(a.canonical() == b.canonical());
  CHECK(a.hash() == b.hash());
  b.set("s.a", "3");
  CHECK(a.hash() != b.hash());
  CHECK(hex64(0x1aULL) == "000000000000001a");
}
