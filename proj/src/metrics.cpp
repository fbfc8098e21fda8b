#include "foginv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "foginv/io.hpp"
#include "foginv/losses.hpp"
#include "foginv/rng.hpp"
#include "foginv/scenegen.hpp"

namespace foginv {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Confusion matrix and mIoU

ConfusionMatrix::ConfusionMatrix(int num_classes) : num_classes(num_classes) {
  if (num_classes < 1) {
    throw DomainError("confusion matrix needs at least one class");
  }
  counts.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
}

void ConfusionMatrix::add(std::span<const std::uint8_t> truth,
                          std::span<const std::uint8_t> pred) {
  if (truth.size() != pred.size()) {
    throw ShapeError("confusion add: " + std::to_string(truth.size()) +
                     " truth vs " + std::to_string(pred.size()) +
                     " prediction pixels");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::uint8_t t = truth[i];
    if (t == kIgnoreLabel) continue;
    if (t >= num_classes) {
      throw DomainError("confusion add: truth label " + std::to_string(t) +
                        " outside " + std::to_string(num_classes) + " classes");
    }
    const std::uint8_t p = pred[i];
    if (p >= num_classes) {
      throw DomainError("confusion add: predicted label " + std::to_string(p) +
                        " outside " + std::to_string(num_classes) + " classes");
    }
    ++counts[static_cast<std::size_t>(t) * num_classes + p];
  }
}

std::int64_t ConfusionMatrix::at(int truth_class, int pred_class) const {
  return counts[static_cast<std::size_t>(truth_class) * num_classes +
                pred_class];
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

MiouResult miou_from_confusion(const ConfusionMatrix& cm) {
  const int c = cm.num_classes;
  MiouResult out;
  out.per_class.assign(static_cast<std::size_t>(c), 0.0);
  out.present.assign(static_cast<std::size_t>(c), false);
  double sum = 0.0;
  int used = 0;
  for (int k = 0; k < c; ++k) {
    std::int64_t tp = cm.at(k, k), fp = 0, fn = 0;
    for (int j = 0; j < c; ++j) {
      if (j == k) continue;
      fn += cm.at(k, j);
      fp += cm.at(j, k);
    }
    const std::int64_t denom = tp + fp + fn;
    if (denom == 0) continue;  // absent from both sides
    out.present[static_cast<std::size_t>(k)] = true;
    out.per_class[static_cast<std::size_t>(k)] =
        static_cast<double>(tp) / static_cast<double>(denom);
    sum += out.per_class[static_cast<std::size_t>(k)];
    ++used;
  }
  if (used == 0) throw DomainError("miou: no class present in either mask");
  out.mean = sum / used;
  return out;
}

MiouResult miou(std::span<const std::uint8_t> truth,
                std::span<const std::uint8_t> pred, int num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(truth, pred);
  return miou_from_confusion(cm);
}

// ---------------------------------------------------------------------------
// k-means

namespace {

double sq_euclid(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

std::vector<int> kmeans(const std::vector<std::vector<double>>& points, int k,
                        std::uint64_t seed, int max_iters) {
  const int n = static_cast<int>(points.size());
  if (n == 0) throw DomainError("kmeans: empty input");
  if (k < 1 || k > n) {
    throw DomainError("kmeans: k " + std::to_string(k) + " outside [1, " +
                      std::to_string(n) + "]");
  }
  const std::size_t dim = points[0].size();
  for (const auto& p : points) {
    if (p.size() != dim) throw ShapeError("kmeans: ragged point dimensions");
  }

  Rng rng(seed);
  std::vector<std::vector<double>> centers;
  centers.reserve(static_cast<std::size_t>(k));
  centers.push_back(points[rng.below(static_cast<std::uint64_t>(n))]);
  std::vector<double> d2(static_cast<std::size_t>(n),
                         std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)],
                   sq_euclid(points[static_cast<std::size_t>(i)], centers.back()));
      total += d2[static_cast<std::size_t>(i)];
    }
    int pick = -1;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double cum = 0.0;
      for (int i = 0; i < n; ++i) {
        cum += d2[static_cast<std::size_t>(i)];
        if (r < cum) {
          pick = i;
          break;
        }
      }
      if (pick < 0) {  // float round-off at the tail: last positive mass
        for (int i = n - 1; i >= 0; --i) {
          if (d2[static_cast<std::size_t>(i)] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    }
    if (pick < 0) pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    centers.push_back(points[static_cast<std::size_t>(pick)]);
  }

  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  std::vector<int> prev;
  for (int it = 0; it < max_iters; ++it) {
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int c = 0; c < k; ++c) {
        const double d = sq_euclid(points[static_cast<std::size_t>(i)],
                                   centers[static_cast<std::size_t>(c)]);
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      assign[static_cast<std::size_t>(i)] = arg;
    }
    if (assign == prev) break;
    prev = assign;

    std::vector<std::vector<double>> sums(
        static_cast<std::size_t>(k), std::vector<double>(dim, 0.0));
    std::vector<int> member(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      const int c = assign[static_cast<std::size_t>(i)];
      ++member[static_cast<std::size_t>(c)];
      for (std::size_t d = 0; d < dim; ++d) {
        sums[static_cast<std::size_t>(c)][d] += points[static_cast<std::size_t>(i)][d];
      }
    }
    std::vector<char> moved(static_cast<std::size_t>(n), 0);
    for (int c = 0; c < k; ++c) {
      if (member[static_cast<std::size_t>(c)] > 0) {
        for (std::size_t d = 0; d < dim; ++d) {
          centers[static_cast<std::size_t>(c)][d] =
              sums[static_cast<std::size_t>(c)][d] /
              member[static_cast<std::size_t>(c)];
        }
        continue;
      }
      // an emptied cluster restarts at the not-yet-taken point farthest from
      // its own center; lowest index wins ties
      double best = -1.0;
      int pick = -1;
      for (int i = 0; i < n; ++i) {
        if (moved[static_cast<std::size_t>(i)]) continue;
        const int a = assign[static_cast<std::size_t>(i)];
        const double d = sq_euclid(points[static_cast<std::size_t>(i)],
                                   centers[static_cast<std::size_t>(a)]);
        if (d > best) {
          best = d;
          pick = i;
        }
      }
      if (pick >= 0) {
        centers[static_cast<std::size_t>(c)] = points[static_cast<std::size_t>(pick)];
        moved[static_cast<std::size_t>(pick)] = 1;
      }
    }
  }
  return assign;
}

// ---------------------------------------------------------------------------
// Clustering agreement

namespace {

// dense relabeling in order of first appearance
std::vector<int> densify(const std::vector<int>& labels, int& count) {
  std::map<int, int> seen;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto [it, fresh] = seen.insert({labels[i], static_cast<int>(seen.size())});
    out[i] = it->second;
    (void)fresh;
  }
  count = static_cast<int>(seen.size());
  return out;
}

double comb2(std::int64_t m) {
  return 0.5 * static_cast<double>(m) * static_cast<double>(m - 1);
}

// expected mutual information under the permutation (hypergeometric) model
double expected_mi(const std::vector<std::int64_t>& a,
                   const std::vector<std::int64_t>& b, std::int64_t n) {
  const double log_n = std::log(static_cast<double>(n));
  double emi = 0.0;
  for (const std::int64_t ai : a) {
    for (const std::int64_t bj : b) {
      const std::int64_t lo = std::max<std::int64_t>(1, ai + bj - n);
      const std::int64_t hi = std::min(ai, bj);
      for (std::int64_t nij = lo; nij <= hi; ++nij) {
        const double term =
            (static_cast<double>(nij) / static_cast<double>(n)) *
            (std::log(static_cast<double>(nij)) + log_n -
             std::log(static_cast<double>(ai)) -
             std::log(static_cast<double>(bj)));
        const double log_prob =
            std::lgamma(static_cast<double>(ai + 1)) +
            std::lgamma(static_cast<double>(bj + 1)) +
            std::lgamma(static_cast<double>(n - ai + 1)) +
            std::lgamma(static_cast<double>(n - bj + 1)) -
            std::lgamma(static_cast<double>(n + 1)) -
            std::lgamma(static_cast<double>(nij + 1)) -
            std::lgamma(static_cast<double>(ai - nij + 1)) -
            std::lgamma(static_cast<double>(bj - nij + 1)) -
            std::lgamma(static_cast<double>(n - ai - bj + nij + 1));
        emi += term * std::exp(log_prob);
      }
    }
  }
  return emi;
}

}  // namespace

ClusterIndices clustering_indices(const std::vector<int>& assignments,
                                  const std::vector<int>& truth) {
  if (assignments.size() != truth.size()) {
    throw ShapeError("clustering_indices: " +
                     std::to_string(assignments.size()) + " assignments vs " +
                     std::to_string(truth.size()) + " labels");
  }
  const std::int64_t n = static_cast<std::int64_t>(assignments.size());
  if (n == 0) throw DomainError("clustering_indices: empty input");

  int ka = 0, kb = 0;
  const std::vector<int> u = densify(assignments, ka);
  const std::vector<int> v = densify(truth, kb);
  if (ka == 1 && kb == 1) return {1.0, 1.0, 1.0};

  std::vector<std::int64_t> nij(static_cast<std::size_t>(ka) * kb, 0);
  std::vector<std::int64_t> a(static_cast<std::size_t>(ka), 0);
  std::vector<std::int64_t> b(static_cast<std::size_t>(kb), 0);
  for (std::int64_t i = 0; i < n; ++i) {
    const int ui = u[static_cast<std::size_t>(i)];
    const int vi = v[static_cast<std::size_t>(i)];
    ++nij[static_cast<std::size_t>(ui) * kb + vi];
    ++a[static_cast<std::size_t>(ui)];
    ++b[static_cast<std::size_t>(vi)];
  }

  double index = 0.0;
  for (const std::int64_t c : nij) index += comb2(c);
  double sum_a = 0.0, sum_b = 0.0;
  for (const std::int64_t c : a) sum_a += comb2(c);
  for (const std::int64_t c : b) sum_b += comb2(c);
  const double expected = sum_a * sum_b / comb2(n);
  const double max_index = 0.5 * (sum_a + sum_b);

  ClusterIndices out;
  out.ari = max_index == expected
                ? 1.0
                : (index - expected) / (max_index - expected);

  const double dn = static_cast<double>(n);
  double ha = 0.0, hb = 0.0, mi = 0.0;
  for (const std::int64_t c : a) {
    if (c > 0) ha -= (c / dn) * std::log(c / dn);
  }
  for (const std::int64_t c : b) {
    if (c > 0) hb -= (c / dn) * std::log(c / dn);
  }
  for (int i = 0; i < ka; ++i) {
    for (int j = 0; j < kb; ++j) {
      const std::int64_t c = nij[static_cast<std::size_t>(i) * kb + j];
      if (c == 0) continue;
      mi += (c / dn) * std::log(dn * static_cast<double>(c) /
                                (static_cast<double>(a[static_cast<std::size_t>(i)]) *
                                 static_cast<double>(b[static_cast<std::size_t>(j)])));
    }
  }
  const double mean_h = 0.5 * (ha + hb);
  out.nmi = mean_h > 0.0 ? std::max(0.0, mi) / mean_h : 0.0;

  const double emi = expected_mi(a, b, n);
  double denom = mean_h - emi;
  // keep the sign but stay away from 0/0 (the sklearn convention)
  constexpr double eps = std::numeric_limits<double>::epsilon();
  denom = denom < 0.0 ? std::min(denom, -eps) : std::max(denom, eps);
  out.ami = (mi - emi) / denom;
  return out;
}

// ---------------------------------------------------------------------------
// Set distances

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine distance: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + " dims");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) {
    throw DomainError("cosine distance: zero-norm vector");
  }
  // round-off can push the ratio a hair past 1 for (near-)identical vectors
  return std::max(0.0, 1.0 - dot / (std::sqrt(na) * std::sqrt(nb)));
}

namespace {

double point_distance(const std::vector<double>& a, const std::vector<double>& b,
                      SetMetric metric) {
  if (metric == SetMetric::Cosine) return cosine_distance(a, b);
  return std::sqrt(sq_euclid(a, b));
}

using PointList = std::vector<std::vector<double>>;

double directed_avg(const PointList& from, const PointList& to,
                    SetMetric metric) {
  double sum = 0.0;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      best = std::min(best, point_distance(p, q, metric));
    }
    sum += best;
  }
  return sum / static_cast<double>(from.size());
}

// exact duplicates carry no set information but would re-weight the directed
// averages, so both inputs are collapsed to their distinct points first
PointList distinct_points(const PointList& pts) {
  PointList out;
  for (const auto& p : pts) {
    if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  }
  return out;
}

}  // namespace

double avg_hausdorff(const FactorSet& a, const FactorSet& b, SetMetric metric) {
  if (a.points.empty() || b.points.empty()) {
    throw DomainError("avg_hausdorff: empty set");
  }
  const std::size_t dim = a.points[0].size();
  for (const auto& p : a.points) {
    if (p.size() != dim) throw ShapeError("avg_hausdorff: ragged dimensions");
  }
  for (const auto& p : b.points) {
    if (p.size() != dim) {
      throw ShapeError("avg_hausdorff: " + std::to_string(dim) + " vs " +
                       std::to_string(p.size()) + " dims");
    }
  }
  const PointList ua = distinct_points(a.points);
  const PointList ub = distinct_points(b.points);
  return 0.5 * (directed_avg(ua, ub, metric) + directed_avg(ub, ua, metric));
}

namespace {

// indices of the k nearest neighbors of anchor i (i excluded), cosine
// distance, ties resolved toward the lower index
std::vector<int> knn_indices(const std::vector<std::vector<double>>& pts, int i,
                             int k) {
  std::vector<std::pair<double, int>> d;
  d.reserve(pts.size() - 1);
  for (int j = 0; j < static_cast<int>(pts.size()); ++j) {
    if (j == i) continue;
    d.emplace_back(cosine_distance(pts[static_cast<std::size_t>(i)],
                                   pts[static_cast<std::size_t>(j)]),
                   j);
  }
  std::sort(d.begin(), d.end());
  std::vector<int> out(static_cast<std::size_t>(k));
  for (int m = 0; m < k; ++m) out[static_cast<std::size_t>(m)] = d[static_cast<std::size_t>(m)].second;
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

double independence_score(const std::vector<std::vector<double>>& fog_factors,
                          const std::vector<std::vector<double>>& content_factors,
                          int k) {
  const int n = static_cast<int>(fog_factors.size());
  if (n != static_cast<int>(content_factors.size())) {
    throw ShapeError("independence_score: " + std::to_string(n) + " fog vs " +
                     std::to_string(content_factors.size()) +
                     " content factors");
  }
  if (n < 2) throw DomainError("independence_score: need at least two samples");
  k = std::min(k, n - 1);
  if (k < 1) throw DomainError("independence_score: k must be positive");

  double overlap = 0.0;
  std::vector<int> both;
  for (int i = 0; i < n; ++i) {
    const std::vector<int> nf = knn_indices(fog_factors, i, k);
    const std::vector<int> nc = knn_indices(content_factors, i, k);
    both.clear();
    std::set_intersection(nf.begin(), nf.end(), nc.begin(), nc.end(),
                          std::back_inserter(both));
    overlap += static_cast<double>(both.size()) / static_cast<double>(k);
  }
  return 1.0 - overlap / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Evaluation drivers

std::vector<std::uint8_t> predict(const SegNetwork& net, const Sample& s) {
  return image_features(net, {}, s).prediction;
}

ImageFeatures image_features(const SegNetwork& net,
                             const std::vector<const FogPassFilter*>& filters,
                             const Sample& s) {
  Tape tape;
  const auto leaves = net.place(tape, false);
  const auto image = tape.leaf({s.height, s.width, 3}, s.image, false);
  const auto fwd = seg_forward(tape, net, leaves, image);

  ImageFeatures out;
  const auto logits = fwd.logits.values();
  const int c = net.num_classes();
  out.prediction.resize(static_cast<std::size_t>(s.height) * s.width);
  for (std::size_t p = 0; p < out.prediction.size(); ++p) {
    int arg = 0;
    double best = logits[p * static_cast<std::size_t>(c)];
    for (int j = 1; j < c; ++j) {
      const double v = logits[p * static_cast<std::size_t>(c) + j];
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    out.prediction[p] = static_cast<std::uint8_t>(arg);
  }

  std::map<std::string, GramVector> style_by_tap;
  for (const auto& [tap, feat] : fwd.taps) {
    GramVector u = style_vector(tape, feat, tap);
    const auto vals = u.values.values();
    out.style.emplace_back(vals.begin(), vals.end());
    style_by_tap.emplace(tap, std::move(u));
  }

  for (const FogPassFilter* f : filters) {
    const auto it = style_by_tap.find(f->tap());
    if (it == style_by_tap.end()) {
      throw DomainError("image_features: network produced no tap " + f->tap());
    }
    const auto filter_leaves = f->place(tape, false);
    const FogFactor factor = fog_factor(tape, *f, filter_leaves, it->second);
    const auto vals = factor.values.values();
    out.factors.emplace_back(vals.begin(), vals.end());
  }
  return out;
}

Sample synth_sf(const Dataset& data, const ManifestRow& cw_row,
                const RunConfig& cfg) {
  (void)data;
  if (cw_row.domain != "CW") {
    throw DomainError("synth_sf: expected a CW row, got " + cw_row.domain);
  }
  const Scene scene = generate_scene(cw_row.seed, cfg.image_size,
                                     cfg.image_size, cfg.num_classes);
  FogParams fog;
  fog.beta = cfg.beta;
  fog.airlight = cw_row.airlight;
  std::vector<double> image = apply_homogeneous_fog(scene, fog);
  // same 8-bit round trip the dataset writer + loader apply
  for (double& v : image) {
    v = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;
  }
  Sample s;
  s.image = std::move(image);
  s.labels = scene.labels;
  s.domain = "SF";
  s.pair_id = cw_row.pair_id;
  s.height = scene.height;
  s.width = scene.width;
  return s;
}

std::vector<Sample> eval_samples(const Dataset& data, const RunConfig& cfg) {
  std::vector<Sample> out;
  const auto& cw_rows = data.rows("eval", "CW");
  const auto& rf_rows = data.rows("eval", "RF");
  out.reserve(2 * cw_rows.size() + rf_rows.size());
  for (const auto& row : cw_rows) out.push_back(data.load(row, true));
  for (const auto& row : cw_rows) out.push_back(synth_sf(data, row, cfg));
  for (const auto& row : rf_rows) out.push_back(data.load(row, true));
  return out;
}

std::vector<SplitEval> evaluate_split(const SegNetwork& net,
                                      const Dataset& data,
                                      const std::string& split) {
  std::vector<SplitEval> out;
  for (const char* domain : {"CW", "SF", "RF"}) {
    if (!data.has(split, domain)) continue;
    ConfusionMatrix cm(net.num_classes());
    int images = 0;
    for (const auto& row : data.rows(split, domain)) {
      const Sample s = data.load(row, true);
      cm.add(s.labels, predict(net, s));
      ++images;
    }
    out.push_back({domain, images, miou_from_confusion(cm)});
  }
  if (out.empty()) throw DomainError("evaluate_split: no domain in " + split);
  return out;
}

// ---------------------------------------------------------------------------
// Analysis report

namespace {

constexpr const char* kDomains[3] = {"CW", "SF", "RF"};

int domain_id(const std::string& d) {
  for (int i = 0; i < 3; ++i) {
    if (d == kDomains[i]) return i;
  }
  throw DomainError("unknown domain " + d);
}

struct RunProducts {
  std::string run_id;
  std::vector<std::string> variants;  // tap names, plus "concat" if several
  // variant -> per-image vectors, stream order
  std::map<std::string, std::vector<std::vector<double>>> fog, style, content;
  std::vector<int> domain_ids;
  std::vector<MiouResult> domain_miou;  // CW, SF, RF
};

std::vector<FogPassFilter> load_filters(const fs::path& dir,
                                        const std::vector<std::string>& taps) {
  std::vector<FogPassFilter> out;
  out.reserve(taps.size());
  for (const auto& tap : taps) out.push_back(FogPassFilter::load(dir / tap));
  return out;
}

void append_concat(std::map<std::string, std::vector<std::vector<double>>>& m,
                   const std::vector<std::string>& taps,
                   const std::vector<std::vector<double>>& per_tap) {
  for (std::size_t t = 0; t < taps.size(); ++t) {
    m[taps[t]].push_back(per_tap[t]);
  }
  if (taps.size() > 1) {
    std::vector<double> cat;
    for (const auto& v : per_tap) cat.insert(cat.end(), v.begin(), v.end());
    m["concat"].push_back(std::move(cat));
  }
}

RunProducts run_products(const fs::path& ckpt, const std::string& run_id,
                         const RunConfig& cfg, const Dataset& data,
                         const std::optional<fs::path>& filter_dir,
                         const std::vector<Sample>& stream) {
  SegNetwork net = SegNetwork::load(ckpt);
  net.tap_layers = cfg.tap_layers;
  const fs::path fdir = filter_dir ? *filter_dir : ckpt / "fogpass";
  const std::vector<FogPassFilter> fog_filters =
      load_filters(fdir, cfg.tap_layers);
  const std::vector<FogPassFilter> content_filters =
      train_content_filters(cfg, net, data);

  RunProducts out;
  out.run_id = run_id;
  out.variants = cfg.tap_layers;
  if (cfg.tap_layers.size() > 1) out.variants.push_back("concat");

  std::vector<const FogPassFilter*> all;
  for (const auto& f : fog_filters) all.push_back(&f);
  for (const auto& f : content_filters) all.push_back(&f);

  std::vector<ConfusionMatrix> cms(3, ConfusionMatrix(net.num_classes()));
  const std::size_t ntaps = cfg.tap_layers.size();
  for (const Sample& s : stream) {
    const ImageFeatures feats = image_features(net, all, s);
    const int d = domain_id(s.domain);
    out.domain_ids.push_back(d);
    cms[static_cast<std::size_t>(d)].add(s.labels, feats.prediction);
    append_concat(out.style, cfg.tap_layers, feats.style);
    append_concat(out.fog, cfg.tap_layers,
                  {feats.factors.begin(),
                   feats.factors.begin() + static_cast<std::ptrdiff_t>(ntaps)});
    append_concat(out.content, cfg.tap_layers,
                  {feats.factors.begin() + static_cast<std::ptrdiff_t>(ntaps),
                   feats.factors.end()});
  }
  for (const auto& cm : cms) out.domain_miou.push_back(miou_from_confusion(cm));
  return out;
}

void dump_factors(const fs::path& dir, const RunProducts& run) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": " + ec.message());
  const std::string wide = run.variants.back();  // concat when present
  const auto& pts = run.fog.at(wide);
  for (int d = 0; d < 3; ++d) {
    std::vector<double> flat;
    int rows = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (run.domain_ids[i] != d) continue;
      flat.insert(flat.end(), pts[i].begin(), pts[i].end());
      ++rows;
    }
    save_fgten(dir / ("factors_" + std::string(kDomains[d]) + ".fgten"),
               {rows, static_cast<int>(pts[0].size())}, flat);
  }
}

}  // namespace

void analyze(const AnalyzeOptions& opts) {
  const RunConfig cfg = load_run_config(opts.checkpoint / "config.txt");
  const Dataset data(opts.data_root);
  const std::vector<Sample> stream = eval_samples(data, cfg);

  std::vector<std::pair<fs::path, std::string>> runs;
  runs.emplace_back(opts.checkpoint, opts.checkpoint.filename().string());
  if (opts.baseline) {
    std::string id = opts.baseline->filename().string();
    if (id == runs[0].second) id += "-baseline";
    runs.emplace_back(*opts.baseline, id);
  }

  const std::uint64_t km_seed = mix_seed(cfg.master_seed, "analyze.kmeans", 0);
  const int ind_k = 200;

  std::vector<std::vector<std::string>> rows;
  auto emit = [&](const std::string& run, const std::string& metric,
                  const std::string& key, double value) {
    rows.push_back({run, metric, key, format_double(value)});
  };

  for (const auto& [dir, run_id] : runs) {
    const RunProducts run =
        run_products(dir, run_id, cfg, data, opts.filter_dir, stream);

    for (int d = 0; d < 3; ++d) {
      emit(run_id, "miou", kDomains[d], run.domain_miou[static_cast<std::size_t>(d)].mean);
    }

    std::vector<int> truth = run.domain_ids;
    for (const auto& variant : run.variants) {
      FactorSet sets[3];
      const auto& pts = run.fog.at(variant);
      for (std::size_t i = 0; i < pts.size(); ++i) {
        sets[run.domain_ids[i]].points.push_back(pts[i]);
      }
      emit(run_id, "hausdorff_" + variant, "CW-SF",
           avg_hausdorff(sets[0], sets[1]));
      emit(run_id, "hausdorff_" + variant, "CW-RF",
           avg_hausdorff(sets[0], sets[2]));
      emit(run_id, "hausdorff_" + variant, "SF-RF",
           avg_hausdorff(sets[1], sets[2]));
    }

    for (const char* kind : {"factor", "gram"}) {
      const auto& source = std::string(kind) == "factor" ? run.fog : run.style;
      for (const auto& variant : run.variants) {
        const auto idx = clustering_indices(
            kmeans(source.at(variant), 3, km_seed), truth);
        emit(run_id, std::string("ari_") + kind + "_" + variant, "all", idx.ari);
        emit(run_id, std::string("nmi_") + kind + "_" + variant, "all", idx.nmi);
        emit(run_id, std::string("ami_") + kind + "_" + variant, "all", idx.ami);
      }
    }

    for (const auto& variant : run.variants) {
      emit(run_id, "independence_factor_" + variant, "all",
           independence_score(run.fog.at(variant), run.content.at(variant), ind_k));
      emit(run_id, "independence_gram_" + variant, "all",
           independence_score(run.style.at(variant), run.content.at(variant), ind_k));
    }

    dump_factors(opts.out_dir / run_id, run);
  }

  std::error_code ec;
  fs::create_directories(opts.out_dir, ec);
  if (ec) throw IoError(opts.out_dir.string() + ": " + ec.message());
  write_csv(opts.out_dir / "analysis.csv",
            {"run_id", "metric", "domain_pair_or_class", "value"}, rows);
}

}  // namespace foginv
