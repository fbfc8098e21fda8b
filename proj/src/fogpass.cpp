#include "foginv/fogpass.hpp"

#include <cmath>

#include "foginv/io.hpp"
#include "foginv/rng.hpp"

namespace foginv {

namespace {

constexpr double kSlope = 0.01;

Tensor hinge(Tape& t, Tensor x) { return t.leaky_relu(x, 0.0); }  // [x]+

Tensor cosine_distance(Tape& t, Tensor a, Tensor b) {
  auto na = t.l2_norm(a);
  auto nb = t.l2_norm(b);
  if (na.item() == 0.0 || nb.item() == 0.0) {
    throw DomainError("cosine distance: zero-norm factor");
  }
  auto cos = t.div(t.dot(a, b), t.mul(na, nb));
  return t.add_scalar(t.scale(cos, -1.0), 1.0);
}

Tensor pair_contrastive(Tape& t, const std::vector<FogFactor>& factors,
                        double margin,
                        const std::function<bool(const FogFactor&,
                                                 const FogFactor&)>& same) {
  if (margin <= 0.0 || margin >= 2.0) {
    throw DomainError("filter loss: margin " + std::to_string(margin) +
                      " outside (0, 2)");
  }
  Tensor loss = t.scalar(0.0);
  for (std::size_t i = 0; i < factors.size(); ++i) {
    for (std::size_t j = i + 1; j < factors.size(); ++j) {
      auto d = cosine_distance(t, factors[i].values, factors[j].values);
      Tensor term;
      if (same(factors[i], factors[j])) {
        term = t.square(hinge(t, t.add_scalar(d, -margin)));
      } else {
        term = t.square(hinge(t, t.add_scalar(t.scale(d, -1.0), margin)));
      }
      loss = t.add(loss, term);
    }
  }
  return loss;
}

}  // namespace

Tensor gram(Tape& t, Tensor feature_map) {
  const Shape& s = feature_map.shape();
  if (s.size() != 3) {
    throw ShapeError("gram: expected [c,h,w], got " + shape_str(s));
  }
  auto flat = t.reshape(feature_map, {s[0], s[1] * s[2]});
  return t.matmul(flat, t.transpose(flat, {1, 0}));
}

GramVector upper_tri_vec(Tape& t, Tensor g, const std::string& source_tap,
                         int spatial_size) {
  const Shape& s = g.shape();
  if (s.size() != 2 || s[0] != s[1]) {
    throw ShapeError("upper_tri_vec: expected square matrix, got " +
                     shape_str(s));
  }
  const int c = s[0];
  const auto v = g.values();
  double maxabs = 1.0;
  for (double x : v) maxabs = std::max(maxabs, std::abs(x));
  for (int i = 0; i < c; ++i) {
    for (int j = i + 1; j < c; ++j) {
      const double a = v[static_cast<std::size_t>(i * c + j)];
      const double b = v[static_cast<std::size_t>(j * c + i)];
      if (std::abs(a - b) > 1e-9 * maxabs) {
        throw DomainError("upper_tri_vec: entry (" + std::to_string(i) + "," +
                          std::to_string(j) + ") asymmetric by " +
                          std::to_string(a - b));
      }
    }
  }
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(c) * (c + 1) / 2);
  for (int i = 0; i < c; ++i) {
    for (int j = i; j < c; ++j) idx.push_back(i * c + j);
  }
  GramVector out;
  out.values = t.gather(g, std::move(idx));
  out.source_tap = source_tap;
  out.channels = c;
  out.spatial_size = spatial_size;
  return out;
}

GramVector style_vector(Tape& t, Tensor feature_map,
                        const std::string& source_tap) {
  const Shape& s = feature_map.shape();
  if (s.size() != 3) {
    throw ShapeError("style_vector: expected [c,h,w], got " + shape_str(s));
  }
  const int n = s[1] * s[2];
  auto g = t.scale(gram(t, feature_map), 1.0 / static_cast<double>(n));
  return upper_tri_vec(t, g, source_tap, n);
}

FogPassFilter FogPassFilter::build(std::uint64_t seed, std::string tap,
                                   int in_dim, int dim) {
  if (in_dim < 1 || dim < 1) {
    throw ConfigError("fog-pass filter: non-positive dimension");
  }
  FogPassFilter f;
  f.tap_ = std::move(tap);
  f.in_dim_ = in_dim;
  f.dim_ = dim;
  f.shapes_ = {{2 * dim, in_dim}, {2 * dim}, {dim, 2 * dim}, {dim}};
  Rng rng(seed);
  for (const Shape& s : f.shapes_) {
    std::vector<double> v(static_cast<std::size_t>(numel(s)), 0.0);
    if (s.size() == 2) {  // He fan-in, zero bias
      const double std = std::sqrt(2.0 / static_cast<double>(s[1]));
      for (auto& x : v) x = rng.normal() * std;
    }
    f.params_.push_back(std::move(v));
  }
  return f;
}

std::vector<Tensor> FogPassFilter::place(Tape& t, bool requires_grad) const {
  std::vector<Tensor> leaves;
  for (std::size_t i = 0; i < shapes_.size(); ++i) {
    leaves.push_back(t.leaf(shapes_[i], params_[i], requires_grad));
  }
  return leaves;
}

FogFactor fog_factor(Tape& t, const FogPassFilter& filter,
                     const std::vector<Tensor>& filter_leaves,
                     const GramVector& u) {
  if (u.values.size() != filter.in_dim()) {
    throw ShapeError("fog_factor: style vector length " +
                     std::to_string(u.values.size()) + " vs filter input " +
                     std::to_string(filter.in_dim()));
  }
  auto col = t.reshape(u.values, {filter.in_dim(), 1});
  auto h = t.add(t.matmul(filter_leaves[0], col),
                 t.reshape(filter_leaves[1], {2 * filter.dim(), 1}));
  h = t.leaky_relu(h, kSlope);
  auto f = t.add(t.matmul(filter_leaves[2], h),
                 t.reshape(filter_leaves[3], {filter.dim(), 1}));
  FogFactor out;
  out.values = t.reshape(f, {filter.dim()});
  out.tap = filter.tap();
  return out;
}

Tensor filter_loss(Tape& t, const std::vector<FogFactor>& factors,
                   double margin) {
  if (factors.size() < 2) {
    throw DomainError("filter_loss: needs at least two factors");
  }
  return pair_contrastive(t, factors, margin,
                          [](const FogFactor& a, const FogFactor& b) {
                            return a.domain == b.domain;
                          });
}

Tensor content_filter_loss(Tape& t, const std::vector<FogFactor>& factors,
                           double margin) {
  return pair_contrastive(
      t, factors, margin, [](const FogFactor& a, const FogFactor& b) {
        const bool cw_sf = (a.domain == "CW" && b.domain == "SF") ||
                           (a.domain == "SF" && b.domain == "CW");
        return cw_sf && a.pair_id == b.pair_id;
      });
}

void FogPassFilter::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_csv(dir / "filter.csv", {"key", "value"},
            {{"tap", tap_},
             {"in_dim", std::to_string(in_dim_)},
             {"dim", std::to_string(dim_)}});
  static constexpr const char* kNames[] = {"w1", "b1", "w2", "b2"};
  for (std::size_t i = 0; i < shapes_.size(); ++i) {
    save_fgten(dir / (std::string(kNames[i]) + ".fgten"), shapes_[i],
               params_[i]);
  }
}

FogPassFilter FogPassFilter::load(const std::filesystem::path& dir) {
  const auto rows = read_csv(dir / "filter.csv");
  std::string tap;
  int in_dim = 0, dim = 0;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 2) continue;
    if (rows[r][0] == "tap") tap = rows[r][1];
    if (rows[r][0] == "in_dim") in_dim = std::stoi(rows[r][1]);
    if (rows[r][0] == "dim") dim = std::stoi(rows[r][1]);
  }
  if (tap.empty() || in_dim <= 0 || dim <= 0) {
    throw IoError((dir / "filter.csv").string() + ": incomplete filter spec");
  }
  FogPassFilter f = build(0, tap, in_dim, dim);
  static constexpr const char* kNames[] = {"w1", "b1", "w2", "b2"};
  for (std::size_t i = 0; i < f.shapes_.size(); ++i) {
    const auto t = load_fgten(dir / (std::string(kNames[i]) + ".fgten"));
    if (t.shape != f.shapes_[i]) {
      throw IoError((dir / kNames[i]).string() + ".fgten: shape mismatch");
    }
    f.params_[i] = t.values;
  }
  return f;
}

}  // namespace foginv
