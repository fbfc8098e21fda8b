#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "foginv/errors.hpp"
#include "foginv/tensor.hpp"

namespace foginv {

// A tensor that lives off the tape: shape plus row-major values.
struct HostTensor {
  Shape shape;
  std::vector<double> values;
};

// .fgten container: 8-byte magic "FGTEN01\n", u32 LE rank, rank u64 LE
// extents, then the row-major f64 LE payload. Written atomically enough for
// our purposes (single process); load validates magic, rank and size.
void save_fgten(const std::filesystem::path& path, const Shape& shape,
                std::span<const double> values);
HostTensor load_fgten(const std::filesystem::path& path);

// 8-bit binary netpbm. RGB images are interleaved [H,W,3]; grayscale [H,W].
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 (PGM) or 3 (PPM)
  std::vector<std::uint8_t> pixels;
};

// rgb holds H*W*3 unit-range doubles; values are clamped then rounded.
void save_ppm(const std::filesystem::path& path, int width, int height,
              std::span<const double> rgb);
void save_pgm(const std::filesystem::path& path, int width, int height,
              std::span<const std::uint8_t> gray);
ImageU8 load_ppm(const std::filesystem::path& path);
ImageU8 load_pgm(const std::filesystem::path& path);

// Flat CSV: comma separator, '.' decimal point, LF line ends, one header row.
// Fields never contain commas, so no quoting on either side.
void write_csv(const std::filesystem::path& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
// Returns all rows including the header, CR stripped.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

std::string format_double(double v);  // shortest round-trip representation

}  // namespace foginv
