#include "foginv/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace foginv {

namespace {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; add byte swaps for this target");
static_assert(sizeof(double) == 8 && std::numeric_limits<double>::is_iec559);

constexpr char kMagic[8] = {'F', 'G', 'T', 'E', 'N', '0', '1', '\n'};

[[noreturn]] void io_fail(const std::filesystem::path& path,
                          const std::string& what) {
  throw IoError(path.string() + ": " + what);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) io_fail(path, "cannot open for writing");
  return f;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) io_fail(path, "cannot open for reading");
  return f;
}

// netpbm header token: skips whitespace and '#' comments to end of line.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
    } else if (!std::isspace(c)) {
      tok.push_back(static_cast<char>(c));
      break;
    }
  }
  while ((c = in.get()) != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

int pnm_int(std::istream& in, const std::filesystem::path& path,
            const char* field) {
  const std::string tok = pnm_token(in);
  int v = 0;
  const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || p != tok.data() + tok.size() || v <= 0) {
    io_fail(path, std::string("bad ") + field + " '" + tok + "'");
  }
  return v;
}

ImageU8 load_pnm(const std::filesystem::path& path, const char* magic,
                 int channels) {
  auto f = open_in(path);
  char m[2];
  f.read(m, 2);
  if (!f || m[0] != magic[0] || m[1] != magic[1]) {
    io_fail(path, std::string("expected ") + magic + " header");
  }
  ImageU8 img;
  img.channels = channels;
  img.width = pnm_int(f, path, "width");
  img.height = pnm_int(f, path, "height");
  const int maxval = pnm_int(f, path, "maxval");
  if (maxval != 255) io_fail(path, "only maxval 255 supported");
  // exactly one whitespace byte separates the header from the raster
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * channels;
  img.pixels.resize(n);
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(f.gcount()) != n) io_fail(path, "truncated raster");
  return img;
}

}  // namespace

void save_fgten(const std::filesystem::path& path, const Shape& shape,
                std::span<const double> values) {
  if (numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("save_fgten: shape " + shape_str(shape) + " holds " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto f = open_out(path);
  f.write(kMagic, sizeof(kMagic));
  const std::uint32_t rank = static_cast<std::uint32_t>(shape.size());
  f.write(reinterpret_cast<const char*>(&rank), 4);
  for (int e : shape) {
    const std::uint64_t ext = static_cast<std::uint64_t>(e);
    f.write(reinterpret_cast<const char*>(&ext), 8);
  }
  f.write(reinterpret_cast<const char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!f) io_fail(path, "write failed");
}

HostTensor load_fgten(const std::filesystem::path& path) {
  auto f = open_in(path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0) io_fail(path, "bad magic");
  std::uint32_t rank = 0;
  f.read(reinterpret_cast<char*>(&rank), 4);
  if (!f || rank > 16) io_fail(path, "bad rank");
  HostTensor t;
  std::int64_t n = 1;
  for (std::uint32_t d = 0; d < rank; ++d) {
    std::uint64_t ext = 0;
    f.read(reinterpret_cast<char*>(&ext), 8);
    if (!f || ext == 0 || ext > (1ULL << 31)) io_fail(path, "bad extent");
    t.shape.push_back(static_cast<int>(ext));
    n *= static_cast<std::int64_t>(ext);
  }
  t.values.resize(static_cast<std::size_t>(n));
  f.read(reinterpret_cast<char*>(t.values.data()),
         static_cast<std::streamsize>(t.values.size() * sizeof(double)));
  if (static_cast<std::size_t>(f.gcount()) != t.values.size() * sizeof(double)) {
    io_fail(path, "truncated payload");
  }
  return t;
}

void save_ppm(const std::filesystem::path& path, int width, int height,
              std::span<const double> rgb) {
  const std::size_t n = static_cast<std::size_t>(width) * height * 3;
  if (rgb.size() != n) {
    throw ShapeError("save_ppm: expected " + std::to_string(n) + " values, got " +
                     std::to_string(rgb.size()));
  }
  auto f = open_out(path);
  f << "P6\n" << width << ' ' << height << "\n255\n";
  std::vector<std::uint8_t> bytes(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = std::clamp(rgb[i], 0.0, 1.0);
    bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(n));
  if (!f) io_fail(path, "write failed");
}

void save_pgm(const std::filesystem::path& path, int width, int height,
              std::span<const std::uint8_t> gray) {
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (gray.size() != n) {
    throw ShapeError("save_pgm: expected " + std::to_string(n) + " values, got " +
                     std::to_string(gray.size()));
  }
  auto f = open_out(path);
  f << "P5\n" << width << ' ' << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(gray.data()),
          static_cast<std::streamsize>(n));
  if (!f) io_fail(path, "write failed");
}

ImageU8 load_ppm(const std::filesystem::path& path) {
  return load_pnm(path, "P6", 3);
}

ImageU8 load_pgm(const std::filesystem::path& path) {
  return load_pnm(path, "P5", 1);
}

void write_csv(const std::filesystem::path& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  auto f = open_out(path);
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) f << ',';
      f << cells[i];
    }
    f << '\n';
  };
  emit(header);
  for (const auto& row : rows) {
    if (row.size() != header.size()) {
      io_fail(path, "row width " + std::to_string(row.size()) +
                        " vs header width " + std::to_string(header.size()));
    }
    emit(row);
  }
  if (!f) io_fail(path, "write failed");
}

std::vector<std::vector<std::string>> read_csv(
    const std::filesystem::path& path) {
  auto f = open_in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && f.peek() == EOF) break;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      if (comma == std::string::npos) {
        cells.push_back(line.substr(start));
        break;
      }
      cells.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string format_double(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

}  // namespace foginv
