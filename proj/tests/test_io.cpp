#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <charconv>
#include <fstream>

#include "foginv/io.hpp"
#include "foginv/rng.hpp"

using namespace foginv;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir() {
  auto d = fs::temp_directory_path() / "foginv_io_test";
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("fgten round trip is bitwise exact") {
  const auto p = tmpdir() / "a.fgten";
  Rng rng(5);
  std::vector<double> v(24);
  for (auto& x : v) x = rng.normal() * 1e3;
  v[0] = -0.0;
  v[1] = 1e-308;
  save_fgten(p, {2, 3, 4}, v);
  const auto t = load_fgten(p);
  CHECK(t.shape == Shape{2, 3, 4});
  REQUIRE(t.values.size() == 24);
  for (int i = 0; i < 24; ++i) {
    CHECK(std::memcmp(&t.values[i], &v[i], 8) == 0);
  }
}

TEST_CASE("fgten header layout is stable") {
  const auto p = tmpdir() / "b.fgten";
  save_fgten(p, {2, 3}, std::vector<double>(6, 1.5));
  CHECK(fs::file_size(p) == 8 + 4 + 2 * 8 + 6 * 8);
  std::ifstream f(p, std::ios::binary);
  char magic[8];
  f.read(magic, 8);
  CHECK(std::string(magic, 8) == "FGTEN01\n");
  std::uint32_t rank;
  f.read(reinterpret_cast<char*>(&rank), 4);
  CHECK(rank == 2);
  std::uint64_t e0, e1;
  f.read(reinterpret_cast<char*>(&e0), 8);
  f.read(reinterpret_cast<char*>(&e1), 8);
  CHECK(e0 == 2);
  CHECK(e1 == 3);
}

TEST_CASE("fgten rejects corruption") {
  const auto p = tmpdir() / "c.fgten";
  save_fgten(p, {4}, std::vector<double>{1, 2, 3, 4});
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
  }
  CHECK_THROWS_AS(load_fgten(p), IoError);
  const auto q = tmpdir() / "d.fgten";
  save_fgten(q, {4}, std::vector<double>{1, 2, 3, 4});
  fs::resize_file(q, fs::file_size(q) - 8);
  CHECK_THROWS_AS(load_fgten(q), IoError);
  CHECK_THROWS_AS(load_fgten(tmpdir() / "missing.fgten"), IoError);
  CHECK_THROWS_AS(save_fgten(tmpdir() / "e.fgten", {2, 2},
                             std::vector<double>{1.0}),
                  ShapeError);
}

TEST_CASE("ppm survives a write/read cycle at 8-bit precision") {
  const auto p = tmpdir() / "img.ppm";
  Rng rng(8);
  std::vector<double> rgb(5 * 4 * 3);
  for (auto& x : rgb) x = rng.uniform(-0.1, 1.1);  // exercise clamping
  save_ppm(p, 5, 4, rgb);
  const auto img = load_ppm(p);
  CHECK(img.width == 5);
  CHECK(img.height == 4);
  CHECK(img.channels == 3);
  REQUIRE(img.pixels.size() == rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    const double c = std::clamp(rgb[i], 0.0, 1.0);
    CHECK(img.pixels[i] == static_cast<std::uint8_t>(std::lround(c * 255.0)));
  }
}

TEST_CASE("pgm round trip and header comments") {
  const auto p = tmpdir() / "lab.pgm";
  std::vector<std::uint8_t> lab{0, 1, 7, 255, 3, 4};
  save_pgm(p, 3, 2, lab);
  auto img = load_pgm(p);
  CHECK(img.width == 3);
  CHECK(img.height == 2);
  CHECK(img.pixels == lab);

  // hand-written header with a comment line, as other tools may emit
  const auto q = tmpdir() / "comment.pgm";
  {
    std::ofstream f(q, std::ios::binary);
    f << "P5\n# from elsewhere\n2 1\n255\n";
    f.put(static_cast<char>(9));
    f.put(static_cast<char>(200));
  }
  img = load_pgm(q);
  CHECK(img.width == 2);
  CHECK(img.pixels[0] == 9);
  CHECK(img.pixels[1] == 200);
  CHECK_THROWS_AS(load_ppm(q), IoError);  // wrong magic for ppm
}

TEST_CASE("csv round trip") {
  const auto p = tmpdir() / "t.csv";
  write_csv(p, {"iter", "loss"}, {{"0", "1.5"}, {"1", "0.25"}});
  const auto rows = read_csv(p);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == std::vector<std::string>{"iter", "loss"});
  CHECK(rows[2] == std::vector<std::string>{"1", "0.25"});
  CHECK_THROWS_AS(write_csv(p, {"a", "b"}, {{"1"}}), IoError);
}

TEST_CASE("format_double round trips through parsing") {
  for (double v : {0.0, -1.5, 3.141592653589793, 6e-4, 1e300, 5e-324}) {
    const std::string s = format_double(v);
    double back = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), back);
    CHECK(ec == std::errc{});
    CHECK(p == s.data() + s.size());
    CHECK(back == v);
  }
}
