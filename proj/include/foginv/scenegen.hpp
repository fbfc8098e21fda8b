#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "foginv/errors.hpp"

namespace foginv {

// One procedurally generated clear-weather scene: image, per-pixel class ids
// and a metric depth map, all deterministic in the seed.
struct Scene {
  int height = 0;
  int width = 0;
  int num_classes = 0;
  std::vector<double> image;        // [H,W,3] in [0,1]
  std::vector<std::uint8_t> labels; // [H,W], ids < num_classes
  std::vector<double> depth;        // [H,W], meters, > 0
  std::uint64_t seed = 0;
};

struct FogParams {
  double beta = 0.005;                                // 1/m
  std::array<double, 3> airlight = {0.9, 0.9, 0.92};  // in [0,1]
};

// Dial-down knobs for the heterogeneous model; the defaults are the real
// proxy, zeroing them degenerates to the homogeneous model (used in tests).
struct HeteroFogKnobs {
  double field_lo = 0.5;     // beta multiplier range over the noise field
  double field_hi = 2.0;
  double tint = 0.1;         // per-channel airlight jitter bound
  double noise_sigma = 0.01; // additive sensor noise
};

// Sky gradient over a receding ground plane, with seeded textured rectangles,
// ellipses and triangles z-buffered in front. Classes 0/1 are sky/ground; the
// rest are shape classes.
Scene generate_scene(std::uint64_t seed, int height, int width, int num_classes);

// I = R * exp(-beta*d) + A * (1 - exp(-beta*d)) per pixel and channel.
std::vector<double> apply_homogeneous_fog(const Scene& scene,
                                          const FogParams& params);

// Same optics but with a smooth spatially varying beta field, a per-image
// airlight tint and additive sensor noise; the stand-in for real fog.
std::vector<double> apply_heterogeneous_fog(const Scene& scene,
                                            const FogParams& base_params,
                                            std::uint64_t seed,
                                            const HeteroFogKnobs& knobs = {});

struct DatasetConfig {
  std::filesystem::path root;
  int image_size = 64;
  int num_classes = 8;
  int train_cw = 400;  // SF counterparts are implied 1:1
  int train_rf = 400;
  int eval_cw = 100;
  int eval_rf = 100;
  FogParams fog;
  std::uint64_t master_seed = 1;
};

// Writes <root>/<split>/<domain>/<pair>_<index>.{ppm,labels.pgm,depth.fgten}
// for train CW/SF/RF and eval CW/RF, plus manifest.csv at the root.
void build_dataset(const DatasetConfig& config);

// Smooth multi-octave value noise in [0,1]; shared by scene textures and the
// heterogeneous beta field.
double value_noise(double x, double y, int octaves, std::uint64_t seed);

}  // namespace foginv
