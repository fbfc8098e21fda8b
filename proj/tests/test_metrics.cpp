#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "foginv/config.hpp"
#include "foginv/errors.hpp"
#include "foginv/io.hpp"
#include "foginv/metrics.hpp"
#include "foginv/rng.hpp"
#include "foginv/scenegen.hpp"
#include "foginv/trainer.hpp"

using namespace foginv;
namespace fs = std::filesystem;

namespace {

const fs::path& micro_root() {
  static const fs::path root = [] {
    fs::path r = fs::temp_directory_path() / "foginv_metrics_ds";
    fs::remove_all(r);
    DatasetConfig d;
    d.root = r;
    d.image_size = 24;
    d.num_classes = 6;
    d.train_cw = 8;
    d.train_rf = 8;
    d.eval_cw = 4;
    d.eval_rf = 4;
    d.master_seed = 9;
    build_dataset(d);
    return r;
  }();
  return root;
}

RunConfig micro_cfg() {
  RunConfig c;
  c.data_root = micro_root().string();
  c.image_size = 24;
  c.num_classes = 6;
  c.train_cw = 8;
  c.train_rf = 8;
  c.eval_cw = 4;
  c.eval_rf = 4;
  c.width_base = 8;
  c.factor_dim = 8;
  c.batch_per_domain = 2;
  c.pretrain_iters = 2;
  c.warmup_iters = 2;
  c.total_iters = 4;
  c.lambda_fsm = 1e6;
  c.master_seed = 9;
  return c;
}

// one trained micro run shared by the driver tests
const fs::path& micro_run() {
  static const fs::path out = [] {
    fs::path r = fs::temp_directory_path() / "foginv_metrics_run";
    fs::remove_all(r);
    const RunConfig cfg = micro_cfg();
    Dataset data(micro_root());
    Trainer tr(cfg, data);
    tr.train(r);
    return r;
  }();
  return out;
}

std::vector<double> unit2(double degrees) {
  const double rad = degrees * std::numbers::pi / 180.0;
  return {std::cos(rad), std::sin(rad)};
}

// independent neighbor-set oracle: full distance matrix + selection sort
double brute_independence(const std::vector<std::vector<double>>& fog,
                          const std::vector<std::vector<double>>& content,
                          int k) {
  const int n = static_cast<int>(fog.size());
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    auto pick = [&](const std::vector<std::vector<double>>& pts) {
      std::vector<int> cand;
      for (int j = 0; j < n; ++j) {
        if (j != i) cand.push_back(j);
      }
      std::vector<int> chosen;
      for (int m = 0; m < k; ++m) {
        int best = -1;
        double bd = 1e300;
        for (const int j : cand) {
          if (std::find(chosen.begin(), chosen.end(), j) != chosen.end())
            continue;
          const double d = cosine_distance(pts[static_cast<std::size_t>(i)],
                                           pts[static_cast<std::size_t>(j)]);
          if (d < bd || (d == bd && j < best)) {
            bd = d;
            best = j;
          }
        }
        chosen.push_back(best);
      }
      return chosen;
    };
    const auto nf = pick(fog);
    const auto nc = pick(content);
    int inter = 0;
    for (const int j : nf) {
      if (std::find(nc.begin(), nc.end(), j) != nc.end()) ++inter;
    }
    acc += static_cast<double>(inter) / k;
  }
  return 1.0 - acc / n;
}

// all set partitions of n elements as restricted growth strings
std::vector<std::vector<int>> all_partitions(int n) {
  std::vector<std::vector<int>> out;
  std::vector<int> rgs(static_cast<std::size_t>(n), 0);
  const auto rec = [&](auto&& self, int pos, int maxv) -> void {
    if (pos == n) {
      out.push_back(rgs);
      return;
    }
    for (int v = 0; v <= maxv + 1; ++v) {
      rgs[static_cast<std::size_t>(pos)] = v;
      self(self, pos + 1, std::max(maxv, v));
    }
  };
  rec(rec, 0, -1);
  return out;
}

}  // namespace

TEST_CASE("miou: perfect prediction scores 1") {
  const std::vector<std::uint8_t> m{0, 1, 2, 1, 0, 2};
  const auto r = miou(m, m, 3);
  CHECK(r.mean == 1.0);
  for (int c = 0; c < 3; ++c) {
    CHECK(r.present[static_cast<std::size_t>(c)]);
    CHECK(r.per_class[static_cast<std::size_t>(c)] == 1.0);
  }
}

TEST_CASE("miou: hand-counted 2x2 case") {
  // three pixels of class 0 predicted right, one class-1 pixel missed
  const std::vector<std::uint8_t> truth{0, 0, 0, 1};
  const std::vector<std::uint8_t> pred{0, 0, 0, 0};
  const auto r = miou(truth, pred, 2);
  CHECK(r.per_class[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(r.per_class[1] == 0.0);
  CHECK(r.mean == doctest::Approx(0.375).epsilon(1e-12));
}

TEST_CASE("miou: pixel order, ignore label, absent classes") {
  std::vector<std::uint8_t> truth{0, 0, 1, 1, 2, 2, 0, 1};
  std::vector<std::uint8_t> pred{0, 1, 1, 1, 2, 0, 0, 1};
  const auto base = miou(truth, pred, 5);  // classes 3, 4 appear nowhere
  CHECK_FALSE(base.present[3]);
  CHECK_FALSE(base.present[4]);

  // same pixels shuffled
  std::vector<std::size_t> order{5, 2, 7, 0, 3, 6, 1, 4};
  std::vector<std::uint8_t> t2, p2;
  for (const auto i : order) {
    t2.push_back(truth[i]);
    p2.push_back(pred[i]);
  }
  CHECK(miou(t2, p2, 5).mean == base.mean);

  // ignored pixels contribute nothing
  t2 = truth;
  p2 = pred;
  t2.push_back(255);
  p2.push_back(0);
  t2.push_back(255);
  p2.push_back(4);
  CHECK(miou(t2, p2, 5).mean == base.mean);

  CHECK_THROWS_AS(miou(std::vector<std::uint8_t>{255, 255},
                       std::vector<std::uint8_t>{0, 0}, 3),
                  DomainError);
  CHECK_THROWS_AS(miou(std::vector<std::uint8_t>{0, 7},
                       std::vector<std::uint8_t>{0, 0}, 3),
                  DomainError);
}

TEST_CASE("miou: confusion-matrix path agrees with direct per-class counting") {
  Rng rng(31);
  std::vector<std::uint8_t> truth(500), pred(500);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = rng.below(10) == 0 ? 255 : static_cast<std::uint8_t>(rng.below(4));
    pred[i] = static_cast<std::uint8_t>(rng.below(4));
  }
  const auto via_cm = miou(truth, pred, 4);

  std::int64_t pixels = 0;
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < 4; ++c) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == 255) continue;
      const bool t = truth[i] == c, p = pred[i] == c;
      tp += t && p;
      fn += t && !p;
      fp += !t && p;
    }
    if (tp + fp + fn == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    CHECK(via_cm.per_class[static_cast<std::size_t>(c)] ==
          doctest::Approx(iou).epsilon(1e-14));
    sum += iou;
    ++used;
  }
  CHECK(via_cm.mean == doctest::Approx(sum / used).epsilon(1e-14));

  ConfusionMatrix cm(4);
  cm.add(truth, pred);
  for (const auto t : truth) pixels += t != 255;
  CHECK(cm.total() == pixels);
}

TEST_CASE("kmeans: two separated blobs match the brute-force optimum") {
  const std::vector<std::vector<double>> pts{
      {0.0, 0.0}, {0.1, 0.0}, {10.0, 10.0}, {10.1, 10.0}};
  const auto got = kmeans(pts, 2, 17);
  REQUIRE(got.size() == 4);

  // every 2-partition of 4 points, scored by within-cluster squared error
  double best_cost = 1e300;
  std::vector<int> best;
  for (int mask = 1; mask < 15; ++mask) {  // skip the two empty splits
    std::vector<int> assign(4);
    for (int i = 0; i < 4; ++i) assign[static_cast<std::size_t>(i)] = (mask >> i) & 1;
    double cost = 0.0;
    for (int c = 0; c < 2; ++c) {
      double cx = 0, cy = 0;
      int m = 0;
      for (int i = 0; i < 4; ++i) {
        if (assign[static_cast<std::size_t>(i)] != c) continue;
        cx += pts[static_cast<std::size_t>(i)][0];
        cy += pts[static_cast<std::size_t>(i)][1];
        ++m;
      }
      if (m == 0) continue;
      cx /= m;
      cy /= m;
      for (int i = 0; i < 4; ++i) {
        if (assign[static_cast<std::size_t>(i)] != c) continue;
        const double dx = pts[static_cast<std::size_t>(i)][0] - cx;
        const double dy = pts[static_cast<std::size_t>(i)][1] - cy;
        cost += dx * dx + dy * dy;
      }
    }
    if (cost < best_cost) {
      best_cost = cost;
      best = assign;
    }
  }
  CHECK(clustering_indices(got, best).ari == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("kmeans: k equal to point count separates every point") {
  const std::vector<std::vector<double>> pts{{0.0}, {1.0}, {2.0}, {5.0}};
  const auto a = kmeans(pts, 4, 3);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("kmeans: deterministic in the seed, guarded against bad input") {
  Rng rng(77);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 40; ++i) {
    pts.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  }
  CHECK(kmeans(pts, 5, 123) == kmeans(pts, 5, 123));
  CHECK_THROWS_AS(kmeans({}, 1, 0), DomainError);
  CHECK_THROWS_AS(kmeans(pts, 41, 0), DomainError);
  CHECK_THROWS_AS(kmeans(pts, 0, 0), DomainError);
}

TEST_CASE("clustering indices: perfect and degenerate agreement") {
  const std::vector<int> t{0, 0, 1, 1, 2, 2};
  const auto r = clustering_indices(t, t);
  CHECK(r.ari == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.nmi == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.ami == doctest::Approx(1.0).epsilon(1e-12));

  const auto single = clustering_indices({4, 4, 4}, {7, 7, 7});
  CHECK(single.ari == 1.0);
  CHECK(single.nmi == 1.0);
  CHECK(single.ami == 1.0);
}

TEST_CASE("clustering indices: frozen reference values") {
  // reference values computed with scikit-learn 1.x
  // (adjusted_rand_score, normalized_mutual_info_score,
  //  adjusted_mutual_info_score, arithmetic averaging)
  struct Case {
    std::vector<int> truth, assign;
    double ari, nmi, ami;
  };
  const std::vector<Case> cases{
      {{0, 0, 1, 1, 2, 2},
       {0, 0, 1, 2, 2, 2},
       0.44444444444444442, 0.73966737680075922, 0.50236070272027378},
      // assignments independent of a balanced truth: negative adjusted scores
      {{0, 1, 0, 1, 0, 1, 0, 1},
       {0, 0, 0, 0, 1, 1, 1, 1},
       -1.0 / 6.0, 0.0, -0.12974472642510582},
      {{0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2},
       {0, 1, 0, 1, 1, 1, 2, 2, 2, 2, 0, 0},
       0.083333333333333329, 0.36907024642854269, 0.19887706834711857},
  };
  for (const auto& c : cases) {
    const auto r = clustering_indices(c.assign, c.truth);
    CHECK(r.ari == doctest::Approx(c.ari).epsilon(1e-12));
    CHECK(r.nmi == doctest::Approx(c.nmi).epsilon(1e-12));
    CHECK(r.ami == doctest::Approx(c.ami).epsilon(1e-12));
  }
  CHECK(cases[1].ari <= 0.0);
}

TEST_CASE("clustering indices: invariant to relabeling") {
  const std::vector<int> truth{0, 0, 1, 1, 2, 2, 0, 1};
  const std::vector<int> assign{0, 1, 1, 1, 2, 2, 0, 0};
  std::vector<int> relabeled;
  for (const int v : assign) relabeled.push_back((v + 5) * 3);  // 15, 18, 21
  const auto a = clustering_indices(assign, truth);
  const auto b = clustering_indices(relabeled, truth);
  CHECK(a.ari == doctest::Approx(b.ari).epsilon(1e-14));
  CHECK(a.nmi == doctest::Approx(b.nmi).epsilon(1e-14));
  CHECK(a.ami == doctest::Approx(b.ami).epsilon(1e-14));
}

TEST_CASE("ARI hits 1 exactly for identical partitions, over all partitions of 6") {
  const auto parts = all_partitions(6);
  REQUIRE(parts.size() == 203);  // Bell(6)
  for (const auto& p : parts) {
    for (const auto& q : parts) {
      const double ari = clustering_indices(p, q).ari;
      if (p == q) {
        CHECK(ari == doctest::Approx(1.0).epsilon(1e-12));
      } else {
        // distinct restricted growth strings are distinct partitions
        CHECK(ari < 1.0 - 1e-12);
      }
    }
  }
}

TEST_CASE("avg hausdorff: identity, unit case, symmetry, duplicates") {
  FactorSet a{{ {1.0, 0.0}, {0.5, 0.5} }, {}};
  CHECK(avg_hausdorff(a, a) <= 1e-12);

  FactorSet u{{ {1.0, 0.0} }, {}};
  FactorSet v{{ {0.0, 1.0} }, {}};
  CHECK(avg_hausdorff(u, v) == doctest::Approx(1.0).epsilon(1e-12));

  FactorSet e1{{ {0.0, 0.0} }, {}};
  FactorSet e2{{ {3.0, 4.0} }, {}};
  CHECK(avg_hausdorff(e1, e2, SetMetric::Euclidean) ==
        doctest::Approx(5.0).epsilon(1e-12));

  Rng rng(5);
  FactorSet r1, r2;
  for (int i = 0; i < 7; ++i) {
    r1.points.push_back({rng.uniform(0.1, 1), rng.uniform(0.1, 1), rng.uniform(0.1, 1)});
  }
  for (int i = 0; i < 9; ++i) {
    r2.points.push_back({rng.uniform(0.1, 1), rng.uniform(0.1, 1), rng.uniform(0.1, 1)});
  }
  CHECK(avg_hausdorff(r1, r2) == doctest::Approx(avg_hausdorff(r2, r1)).epsilon(1e-14));

  FactorSet r2dup = r2;
  r2dup.points.push_back(r2.points[3]);
  CHECK(avg_hausdorff(r1, r2dup) ==
        doctest::Approx(avg_hausdorff(r1, r2)).epsilon(1e-12));

  FactorSet bad{{ {1.0, 0.0, 0.0} }, {}};
  CHECK_THROWS_AS(avg_hausdorff(r1, FactorSet{{{1.0, 0.0}}, {}}), ShapeError);
  CHECK_THROWS_AS(avg_hausdorff(FactorSet{}, bad), DomainError);
}

TEST_CASE("independence score: extremes by construction") {
  // identical representations: the neighbor sets coincide
  std::vector<std::vector<double>> same;
  for (int i = 0; i < 5; ++i) same.push_back(unit2(20.0 * i));
  CHECK(independence_score(same, same, 2) == 0.0);

  // two tight fog groups, content pairing across them: no overlap at k = 1
  std::vector<std::vector<double>> fog{unit2(0), unit2(1), unit2(2),
                                       unit2(180), unit2(181), unit2(182)};
  std::vector<std::vector<double>> content{unit2(0),   unit2(120), unit2(240),
                                           unit2(2),   unit2(122), unit2(242)};
  CHECK(independence_score(fog, content, 1) == 1.0);
}

TEST_CASE("independence score: matches exhaustive neighbor enumeration") {
  Rng rng(41);
  std::vector<std::vector<double>> fog, content;
  for (int i = 0; i < 6; ++i) {
    fog.push_back(unit2(rng.uniform(0.0, 360.0)));
    content.push_back(unit2(rng.uniform(0.0, 360.0)));
  }
  for (const int k : {1, 2, 3}) {
    CHECK(independence_score(fog, content, k) ==
          doctest::Approx(brute_independence(fog, content, k)).epsilon(1e-14));
  }
  // k beyond N-1 clamps
  CHECK(independence_score(fog, content, 200) ==
        doctest::Approx(brute_independence(fog, content, 5)).epsilon(1e-14));
}

TEST_CASE("independence score: invariant to a common reordering") {
  Rng rng(43);
  std::vector<std::vector<double>> fog, content;
  for (int i = 0; i < 8; ++i) {
    fog.push_back({rng.uniform(0.2, 1), rng.uniform(0.2, 1), rng.uniform(0.2, 1)});
    content.push_back({rng.uniform(0.2, 1), rng.uniform(0.2, 1), rng.uniform(0.2, 1)});
  }
  const double base = independence_score(fog, content, 3);
  const std::vector<std::size_t> order{5, 0, 7, 2, 6, 1, 4, 3};
  std::vector<std::vector<double>> f2, c2;
  for (const auto i : order) {
    f2.push_back(fog[i]);
    c2.push_back(content[i]);
  }
  CHECK(independence_score(f2, c2, 3) == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("synthesized fog twin equals the on-disk counterpart") {
  Dataset data(micro_root());
  const RunConfig cfg = micro_cfg();
  const auto& cw = data.rows("train", "CW")[2];
  const Sample synth = synth_sf(data, cw, cfg);
  const Sample disk = data.load(data.sf_counterpart(cw.pair_id), true);
  REQUIRE(synth.image.size() == disk.image.size());
  CHECK(synth.image == disk.image);  // bit-exact through the 8-bit round trip
  CHECK(synth.labels == disk.labels);
  CHECK(synth.domain == "SF");
}

TEST_CASE("eval stream: CW block, synthesized SF twins, RF block") {
  Dataset data(micro_root());
  const RunConfig cfg = micro_cfg();
  const auto stream = eval_samples(data, cfg);
  REQUIRE(stream.size() == 12);  // 4 CW + 4 SF + 4 RF
  for (int i = 0; i < 4; ++i) {
    CHECK(stream[static_cast<std::size_t>(i)].domain == "CW");
    CHECK(stream[static_cast<std::size_t>(i + 4)].domain == "SF");
    CHECK(stream[static_cast<std::size_t>(i + 8)].domain == "RF");
    CHECK(stream[static_cast<std::size_t>(i)].pair_id ==
          stream[static_cast<std::size_t>(i + 4)].pair_id);
    CHECK_FALSE(stream[static_cast<std::size_t>(i)].labels.empty());
  }
}

TEST_CASE("image features: shapes, determinism, tap alignment") {
  Dataset data(micro_root());
  const RunConfig cfg = micro_cfg();
  SegNetwork net = SegNetwork::build(101, cfg.num_classes, cfg.width_base);
  const FogPassFilter fc1 = make_filter_for_tap(net, "C1", cfg.factor_dim, 7);
  const FogPassFilter fr1 = make_filter_for_tap(net, "R1", cfg.factor_dim, 8);
  const Sample s = data.load(data.rows("eval", "CW")[0], true);

  const auto f = image_features(net, {&fc1, &fr1}, s);
  CHECK(f.prediction.size() == static_cast<std::size_t>(s.height * s.width));
  for (const auto p : f.prediction) CHECK(p < cfg.num_classes);
  REQUIRE(f.style.size() == 2);
  // both taps sit before the width doubling, so channels = width_base
  const int ch = cfg.width_base;
  CHECK(f.style[0].size() == static_cast<std::size_t>(ch * (ch + 1) / 2));
  CHECK(f.style[1].size() == static_cast<std::size_t>(ch * (ch + 1) / 2));
  REQUIRE(f.factors.size() == 2);
  CHECK(f.factors[0].size() == static_cast<std::size_t>(cfg.factor_dim));
  CHECK(f.factors[1].size() == static_cast<std::size_t>(cfg.factor_dim));

  const auto again = image_features(net, {&fc1, &fr1}, s);
  CHECK(again.prediction == f.prediction);
  CHECK(again.factors == f.factors);

  const FogPassFilter stray =
      make_filter_for_tap(net, "R1", cfg.factor_dim, 9);
  SegNetwork c1only = net;
  c1only.tap_layers = {"C1"};
  CHECK_THROWS_AS(image_features(c1only, {&stray}, s), DomainError);
}

TEST_CASE("evaluate_split reports each labeled domain") {
  SegNetwork net = SegNetwork::load(micro_run() / "final");
  Dataset data(micro_root());
  const auto evals = evaluate_split(net, data, "eval");
  REQUIRE(evals.size() == 2);  // no SF on disk in eval
  CHECK(evals[0].domain == "CW");
  CHECK(evals[1].domain == "RF");
  for (const auto& e : evals) {
    CHECK(e.images == 4);
    CHECK(e.res.mean >= 0.0);
    CHECK(e.res.mean <= 1.0);
  }
  const auto train_evals = evaluate_split(net, data, "train");
  CHECK(train_evals.size() == 3);  // CW, SF, RF all on disk with labels
}

TEST_CASE("analysis report: content, determinism, non-negative gaps") {
  Dataset data(micro_root());
  const fs::path out = fs::temp_directory_path() / "foginv_metrics_an";
  fs::remove_all(out);

  AnalyzeOptions opts;
  opts.checkpoint = micro_run() / "final";
  opts.baseline = micro_run() / "baseline";
  opts.data_root = micro_root();
  opts.out_dir = out;
  analyze(opts);

  const auto rows = read_csv(out / "analysis.csv");
  REQUIRE(rows.size() > 1);
  CHECK(rows[0] == std::vector<std::string>{"run_id", "metric",
                                            "domain_pair_or_class", "value"});
  int final_rows = 0, baseline_rows = 0;
  bool saw_miou_rf = false;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    REQUIRE(rows[i].size() == 4);
    final_rows += rows[i][0] == "final";
    baseline_rows += rows[i][0] == "baseline";
    if (rows[i][1] == "miou" && rows[i][2] == "RF") saw_miou_rf = true;
    if (rows[i][1].rfind("hausdorff_", 0) == 0) {
      CHECK(std::stod(rows[i][3]) >= 0.0);
    }
    if (rows[i][1].rfind("independence_", 0) == 0) {
      const double v = std::stod(rows[i][3]);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK(final_rows == baseline_rows);
  CHECK(saw_miou_rf);

  // expected metric families for the default two taps
  std::vector<std::string> expect{
      "hausdorff_C1",          "hausdorff_R1",          "hausdorff_concat",
      "ari_factor_C1",         "ari_gram_R1",           "nmi_factor_concat",
      "ami_gram_C1",           "independence_factor_R1", "independence_gram_concat"};
  for (const auto& name : expect) {
    const bool found = std::any_of(rows.begin() + 1, rows.end(),
                                   [&](const auto& r) { return r[1] == name; });
    CHECK_MESSAGE(found, name);
  }

  for (const char* d : {"CW", "SF", "RF"}) {
    const auto t = load_fgten(out / "final" / ("factors_" + std::string(d) + ".fgten"));
    REQUIRE(t.shape.size() == 2);
    CHECK(t.shape[0] == 4);
  }

  // identical bytes on a second run
  std::ifstream f1(out / "analysis.csv", std::ios::binary);
  const std::string bytes1((std::istreambuf_iterator<char>(f1)), {});
  analyze(opts);
  std::ifstream f2(out / "analysis.csv", std::ios::binary);
  const std::string bytes2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(bytes1 == bytes2);
}
