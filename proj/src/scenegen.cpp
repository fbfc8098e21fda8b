#include "foginv/scenegen.hpp"

#include <algorithm>
#include <cmath>

#include "foginv/io.hpp"
#include "foginv/rng.hpp"

namespace foginv {

namespace {

double lattice(std::uint64_t seed, std::int64_t xi, std::int64_t yi) {
  const std::uint64_t h = splitmix_step(
      seed ^ (static_cast<std::uint64_t>(xi) * 0x8da6b34302f9cd1dULL) ^
      (static_cast<std::uint64_t>(yi) * 0xd81638416f0895c5ULL));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

}  // namespace

double value_noise(double x, double y, int octaves, std::uint64_t seed) {
  double acc = 0.0, amp = 1.0, norm = 0.0, fx = x, fy = y;
  for (int o = 0; o < octaves; ++o) {
    const double flx = std::floor(fx), fly = std::floor(fy);
    const auto xi = static_cast<std::int64_t>(flx);
    const auto yi = static_cast<std::int64_t>(fly);
    const double tx = smoothstep(fx - flx), ty = smoothstep(fy - fly);
    const std::uint64_t os = seed + static_cast<std::uint64_t>(o) * 0x9e3779b9ULL;
    const double v00 = lattice(os, xi, yi), v10 = lattice(os, xi + 1, yi);
    const double v01 = lattice(os, xi, yi + 1), v11 = lattice(os, xi + 1, yi + 1);
    const double top = v00 + (v10 - v00) * tx;
    const double bot = v01 + (v11 - v01) * tx;
    acc += amp * (top + (bot - top) * ty);
    norm += amp;
    amp *= 0.5;
    fx *= 2.0;
    fy *= 2.0;
  }
  return acc / norm;
}

Scene generate_scene(std::uint64_t seed, int height, int width,
                     int num_classes) {
  if (height < 16 || width < 16) {
    throw ConfigError("generate_scene: size " + std::to_string(width) + "x" +
                      std::to_string(height) + " below the 16x16 minimum");
  }
  // sky + ground + 10 palette slots for shapes
  if (num_classes < 4 || num_classes > 12) {
    throw ConfigError("generate_scene: num_classes " +
                      std::to_string(num_classes) +
                      " outside [4, 12] (only 12 class slots exist)");
  }
  Scene s;
  s.height = height;
  s.width = width;
  s.num_classes = num_classes;
  s.seed = seed;
  s.image.assign(static_cast<std::size_t>(height) * width * 3, 0.0);
  s.labels.assign(static_cast<std::size_t>(height) * width, 0);
  s.depth.assign(static_cast<std::size_t>(height) * width, 0.0);

  Rng rng(seed);
  const int horizon =
      static_cast<int>(std::lround(height * rng.uniform(0.35, 0.55)));
  const std::uint64_t sky_tex = rng.next_u64();
  const std::uint64_t ground_tex = rng.next_u64();

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * width + x;
      double* px = &s.image[p * 3];
      if (y < horizon) {
        const double u = static_cast<double>(y) / std::max(1, horizon);
        const double n =
            0.03 * (value_noise(x * 0.08, y * 0.08, 2, sky_tex) - 0.5);
        px[0] = 0.55 + 0.20 * u + n;
        px[1] = 0.65 + 0.15 * u + n;
        px[2] = 0.85 + 0.05 * u + n;
        s.labels[p] = 0;
        s.depth[p] = 1000.0;
      } else {
        const double u = static_cast<double>(y - horizon) /
                         std::max(1, height - 1 - horizon);
        const double n =
            0.08 * (value_noise(x * 0.25, y * 0.25, 3, ground_tex) - 0.5);
        px[0] = 0.35 + 0.10 * (1.0 - u) + n;
        px[1] = 0.30 + 0.08 * (1.0 - u) + n;
        px[2] = 0.25 + 0.06 * (1.0 - u) + n;
        s.labels[p] = 1;
        // 300 m at the horizon line falling to 5 m at the bottom edge
        const double t = 1.0 - u;
        s.depth[p] = 5.0 + 295.0 * t * t;
      }
      for (int c = 0; c < 3; ++c) px[c] = std::clamp(px[c], 0.0, 1.0);
    }
  }

  static constexpr double kPalette[10][3] = {
      {0.80, 0.20, 0.20}, {0.20, 0.60, 0.90}, {0.90, 0.70, 0.10},
      {0.40, 0.80, 0.30}, {0.70, 0.30, 0.80}, {0.90, 0.50, 0.20},
      {0.30, 0.90, 0.80}, {0.80, 0.80, 0.80}, {0.50, 0.25, 0.10},
      {0.95, 0.60, 0.80}};

  const int num_shapes = 10 + static_cast<int>(rng.below(6));
  const double unit = std::min(height, width);
  for (int si = 0; si < num_shapes; ++si) {
    // draw every parameter up front so the stream layout is branch-free
    const int kind = static_cast<int>(rng.below(3));
    const int cls =
        2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes - 2)));
    const double dist = rng.uniform(8.0, 250.0);
    const double cx = rng.uniform(0.0, width);
    const double cy = rng.uniform(horizon * 0.3, static_cast<double>(height));
    const double rx = unit * rng.uniform(0.06, 0.20);
    const double ry = unit * rng.uniform(0.06, 0.20);
    const double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double jr = rng.uniform(-0.1, 0.1);
    const double jg = rng.uniform(-0.1, 0.1);
    const double jb = rng.uniform(-0.1, 0.1);
    const std::uint64_t tex = rng.next_u64();

    // triangle vertices (used only when kind == 2)
    double vx[3], vy[3];
    for (int k = 0; k < 3; ++k) {
      const double a = ang + k * 2.0943951023931953;  // 2*pi/3
      vx[k] = cx + rx * std::cos(a);
      vy[k] = cy + ry * std::sin(a);
    }

    const int x0 = std::max(0, static_cast<int>(std::floor(cx - std::max(rx, ry) - 1)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(cx + std::max(rx, ry) + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - std::max(rx, ry) - 1)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(cy + std::max(rx, ry) + 1)));
    const double base[3] = {kPalette[(cls - 2) % 10][0] + jr,
                            kPalette[(cls - 2) % 10][1] + jg,
                            kPalette[(cls - 2) % 10][2] + jb};

    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        bool inside = false;
        if (kind == 0) {  // rectangle
          inside = std::abs(x - cx) <= rx && std::abs(y - cy) <= ry;
        } else if (kind == 1) {  // ellipse
          const double ex = (x - cx) / rx, ey = (y - cy) / ry;
          inside = ex * ex + ey * ey <= 1.0;
        } else {  // triangle via half-plane signs
          double sgn[3];
          for (int k = 0; k < 3; ++k) {
            const int k2 = (k + 1) % 3;
            sgn[k] = (vx[k2] - vx[k]) * (y - vy[k]) -
                     (vy[k2] - vy[k]) * (x - vx[k]);
          }
          inside = (sgn[0] >= 0 && sgn[1] >= 0 && sgn[2] >= 0) ||
                   (sgn[0] <= 0 && sgn[1] <= 0 && sgn[2] <= 0);
        }
        if (!inside) continue;
        const std::size_t p = static_cast<std::size_t>(y) * width + x;
        if (dist >= s.depth[p]) continue;  // z-buffer: nearer wins
        const double n = 0.05 * (value_noise(x * 0.3, y * 0.3, 2, tex) - 0.5);
        double* px = &s.image[p * 3];
        for (int c = 0; c < 3; ++c) px[c] = std::clamp(base[c] + n, 0.0, 1.0);
        s.labels[p] = static_cast<std::uint8_t>(cls);
        s.depth[p] = dist;
      }
    }
  }
  return s;
}

std::vector<double> apply_homogeneous_fog(const Scene& scene,
                                          const FogParams& params) {
  std::vector<double> out(scene.image.size());
  const std::size_t n = scene.depth.size();
  for (std::size_t p = 0; p < n; ++p) {
    const double t = std::exp(-params.beta * scene.depth[p]);
    for (int c = 0; c < 3; ++c) {
      const double v =
          scene.image[p * 3 + c] * t + params.airlight[static_cast<std::size_t>(c)] * (1.0 - t);
      out[p * 3 + c] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

std::vector<double> apply_heterogeneous_fog(const Scene& scene,
                                            const FogParams& base_params,
                                            std::uint64_t seed,
                                            const HeteroFogKnobs& knobs) {
  Rng rng(seed);
  const std::uint64_t field_seed = rng.next_u64();
  std::array<double, 3> air = base_params.airlight;
  for (auto& a : air) {
    a = std::clamp(a + rng.uniform(-knobs.tint, knobs.tint), 0.0, 1.0);
  }
  std::vector<double> out(scene.image.size());
  const std::size_t n = scene.depth.size();
  for (std::size_t p = 0; p < n; ++p) {
    const int y = static_cast<int>(p) / scene.width;
    const int x = static_cast<int>(p) % scene.width;
    const double mult =
        knobs.field_lo + (knobs.field_hi - knobs.field_lo) *
                             value_noise(x / 16.0, y / 16.0, 3, field_seed);
    const double t = std::exp(-(base_params.beta * mult) * scene.depth[p]);
    for (int c = 0; c < 3; ++c) {
      const double v = scene.image[p * 3 + c] * t +
                       air[static_cast<std::size_t>(c)] * (1.0 - t) +
                       knobs.noise_sigma * rng.normal();
      out[p * 3 + c] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

namespace {

struct SampleSpec {
  std::string split;
  std::string domain;
  std::uint64_t pair_id;
  int index;
  std::uint64_t seed;  // scene seed (fog seed derived separately for RF)
  double beta;         // as recorded in the manifest
};

void write_sample(const std::filesystem::path& root, const SampleSpec& spec,
                  const Scene& scene, const std::vector<double>& image) {
  const auto dir = root / spec.split / spec.domain;
  const std::string stem =
      std::to_string(spec.pair_id) + "_" + std::to_string(spec.index);
  save_ppm(dir / (stem + ".ppm"), scene.width, scene.height, image);
  save_pgm(dir / (stem + ".labels.pgm"), scene.width, scene.height,
           scene.labels);
  save_fgten(dir / (stem + ".depth.fgten"), {scene.height, scene.width},
             scene.depth);
}

}  // namespace

void build_dataset(const DatasetConfig& config) {
  if (config.train_cw < 1 || config.train_rf < 1 || config.eval_cw < 1 ||
      config.eval_rf < 1) {
    throw ConfigError("build_dataset: every split needs at least one sample");
  }
  std::error_code ec;
  for (const char* sub :
       {"train/CW", "train/SF", "train/RF", "eval/CW", "eval/RF"}) {
    std::filesystem::create_directories(config.root / sub, ec);
    if (ec) {
      throw IoError((config.root / sub).string() + ": " + ec.message());
    }
  }

  const std::string air = format_double(config.fog.airlight[0]) + ":" +
                          format_double(config.fog.airlight[1]) + ":" +
                          format_double(config.fog.airlight[2]);
  std::vector<std::vector<std::string>> manifest;
  auto record = [&](const SampleSpec& spec) {
    manifest.push_back({spec.split + "/" + spec.domain + "/" +
                            std::to_string(spec.pair_id) + "_" +
                            std::to_string(spec.index) + ".ppm",
                        spec.domain, spec.split, std::to_string(spec.pair_id),
                        std::to_string(spec.seed), format_double(spec.beta),
                        air});
  };

  const int sz = config.image_size;
  // pair-id blocks keep the id spaces of the splits disjoint
  constexpr std::uint64_t kTrainRfBase = 100000, kEvalCwBase = 200000,
                          kEvalRfBase = 300000;

  for (int i = 0; i < config.train_cw; ++i) {
    const std::uint64_t seed =
        mix_seed(config.master_seed, "scene.train.cw", static_cast<std::uint64_t>(i));
    const Scene scene = generate_scene(seed, sz, sz, config.num_classes);
    const SampleSpec cw{"train", "CW", static_cast<std::uint64_t>(i), i, seed, 0.0};
    write_sample(config.root, cw, scene, scene.image);
    record(cw);
    const SampleSpec sf{"train", "SF", static_cast<std::uint64_t>(i), i, seed,
                        config.fog.beta};
    write_sample(config.root, sf, scene,
                 apply_homogeneous_fog(scene, config.fog));
    record(sf);
  }
  for (int i = 0; i < config.train_rf; ++i) {
    const std::uint64_t seed =
        mix_seed(config.master_seed, "scene.train.rf", static_cast<std::uint64_t>(i));
    const std::uint64_t fog_seed =
        mix_seed(config.master_seed, "fog.train.rf", static_cast<std::uint64_t>(i));
    const Scene scene = generate_scene(seed, sz, sz, config.num_classes);
    const SampleSpec rf{"train", "RF", kTrainRfBase + static_cast<std::uint64_t>(i),
                        i, seed, config.fog.beta};
    write_sample(config.root, rf, scene,
                 apply_heterogeneous_fog(scene, config.fog, fog_seed));
    record(rf);
  }
  for (int i = 0; i < config.eval_cw; ++i) {
    const std::uint64_t seed =
        mix_seed(config.master_seed, "scene.eval.cw", static_cast<std::uint64_t>(i));
    const Scene scene = generate_scene(seed, sz, sz, config.num_classes);
    const SampleSpec cw{"eval", "CW", kEvalCwBase + static_cast<std::uint64_t>(i),
                        i, seed, 0.0};
    write_sample(config.root, cw, scene, scene.image);
    record(cw);
  }
  for (int i = 0; i < config.eval_rf; ++i) {
    const std::uint64_t seed =
        mix_seed(config.master_seed, "scene.eval.rf", static_cast<std::uint64_t>(i));
    const std::uint64_t fog_seed =
        mix_seed(config.master_seed, "fog.eval.rf", static_cast<std::uint64_t>(i));
    const Scene scene = generate_scene(seed, sz, sz, config.num_classes);
    const SampleSpec rf{"eval", "RF", kEvalRfBase + static_cast<std::uint64_t>(i),
                        i, seed, config.fog.beta};
    write_sample(config.root, rf, scene,
                 apply_heterogeneous_fog(scene, config.fog, fog_seed));
    record(rf);
  }

  write_csv(config.root / "manifest.csv",
            {"path", "domain", "split", "pair_id", "seed", "beta", "airlight"},
            manifest);
}

}  // namespace foginv
