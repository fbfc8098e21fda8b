#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "foginv/fogpass.hpp"
#include "foginv/rng.hpp"

using namespace foginv;

namespace {

FogFactor constant_factor(Tape& t, std::vector<double> v, std::string domain,
                          std::uint64_t pair_id = 0) {
  const int n = static_cast<int>(v.size());
  FogFactor f;
  f.values = t.constant({n}, std::move(v));
  f.domain = std::move(domain);
  f.pair_id = pair_id;
  return f;
}

}  // namespace

TEST_CASE("gram of hand-built feature maps") {
  Tape t;
  auto zero = gram(t, t.constant({2, 2, 2}, std::vector<double>(8, 0.0)));
  for (double v : zero.values()) CHECK(v == 0.0);

  auto g1 = gram(t, t.constant({1, 2, 2}, {1, 2, 2, 0}));
  CHECK(g1.shape() == Shape{1, 1});
  CHECK(g1.values()[0] == 9.0);  // 1 + 4 + 4

  auto dup = gram(t, t.constant({2, 1, 3}, {1, 2, 3, 1, 2, 3}));
  CHECK(dup.values()[0] == dup.values()[1]);
  CHECK(dup.values()[1] == dup.values()[2]);
  CHECK(dup.values()[2] == dup.values()[3]);
}

TEST_CASE("gram scales quadratically with the feature map") {
  Rng rng(4);
  std::vector<double> f(3 * 4 * 4), f2(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    f[i] = rng.uniform(-1.0, 1.0);
    f2[i] = 3.0 * f[i];
  }
  Tape t;
  auto g = gram(t, t.constant({3, 4, 4}, f));
  auto g9 = gram(t, t.constant({3, 4, 4}, f2));
  for (std::size_t i = 0; i < g.values().size(); ++i) {
    CHECK(std::abs(g9.values()[i] - 9.0 * g.values()[i]) <=
          1e-9 * std::max(1.0, std::abs(g9.values()[i])));
  }
}

TEST_CASE("upper triangle vectorization") {
  Tape t;
  auto u2 = upper_tri_vec(t, t.constant({2, 2}, {1, 2, 2, 3}), "C1", 4);
  REQUIRE(u2.values.size() == 3);
  CHECK(u2.values.values()[0] == 1.0);
  CHECK(u2.values.values()[1] == 2.0);
  CHECK(u2.values.values()[2] == 3.0);
  CHECK(u2.channels == 2);
  CHECK(u2.spatial_size == 4);

  CHECK(upper_tri_vec(t, t.constant({1, 1}, {5.0}), "C1", 1).values.size() == 1);

  Rng rng(9);
  std::vector<double> sym(8 * 8);
  for (int i = 0; i < 8; ++i) {
    for (int j = i; j < 8; ++j) {
      sym[static_cast<std::size_t>(i * 8 + j)] =
          sym[static_cast<std::size_t>(j * 8 + i)] = rng.uniform(-2.0, 2.0);
    }
  }
  auto u8 = upper_tri_vec(t, t.constant({8, 8}, sym), "R1", 16);
  CHECK(u8.values.size() == 36);
  // reconstruction is the identity on symmetric input
  int k = 0;
  for (int i = 0; i < 8; ++i) {
    for (int j = i; j < 8; ++j) {
      CHECK(u8.values.values()[static_cast<std::size_t>(k++)] ==
            sym[static_cast<std::size_t>(i * 8 + j)]);
    }
  }

  auto asym = sym;
  asym[1] += 1e-5;
  CHECK_THROWS_AS(upper_tri_vec(t, t.constant({8, 8}, asym), "R1", 16),
                  DomainError);
}

TEST_CASE("style_vector divides the gram by the spatial size") {
  Tape t;
  auto u = style_vector(t, t.constant({1, 2, 2}, {1, 2, 2, 0}), "C1");
  CHECK(u.spatial_size == 4);
  CHECK(u.values.values()[0] == doctest::Approx(9.0 / 4.0).epsilon(1e-15));
}

TEST_CASE("fog factor through a zeroed and a seeded filter") {
  auto f = FogPassFilter::build(3, "C1", 10, 4);
  CHECK(f.shapes()[0] == Shape{8, 10});
  CHECK(f.shapes()[2] == Shape{4, 8});

  auto zeroed = FogPassFilter::build(3, "C1", 10, 4);
  for (auto& p : zeroed.params()) std::fill(p.begin(), p.end(), 0.0);
  Tape t;
  GramVector u;
  u.values = t.constant({10}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  auto out = fog_factor(t, zeroed, zeroed.place(t, false), u);
  CHECK(out.values.size() == 4);
  for (double v : out.values.values()) CHECK(v == 0.0);

  auto a = fog_factor(t, f, f.place(t, false), u);
  auto b = fog_factor(t, f, f.place(t, false), u);
  for (int i = 0; i < 4; ++i) CHECK(a.values.values()[i] == b.values.values()[i]);

  GramVector bad;
  bad.values = t.constant({9}, std::vector<double>(9, 1.0));
  CHECK_THROWS_AS(fog_factor(t, f, f.place(t, false), bad), ShapeError);
}

TEST_CASE("fog factor norm gradient w.r.t. filter parameters checks out") {
  auto filter = FogPassFilter::build(11, "C1", 6, 3);
  Rng rng(12);
  std::vector<double> uv(6);
  for (auto& x : uv) x = rng.uniform(0.1, 1.0);
  auto fn = [&](Tape& t, const std::vector<Tensor>& p) {
    GramVector u;
    u.values = t.constant({6}, uv);
    auto f = fog_factor(t, filter, p, u);
    return t.dot(f.values, f.values);
  };
  std::vector<GradCheckParam> params;
  for (std::size_t i = 0; i < filter.shapes().size(); ++i) {
    params.push_back({filter.shapes()[i], filter.params()[i]});
  }
  CHECK(grad_check(fn, params, 1e-5, 41) < 1e-5);
}

TEST_CASE("filter loss hand values") {
  Tape t;
  // identical same-domain factors: d = 0, hinge inactive
  {
    std::vector<FogFactor> fs{constant_factor(t, {1, 1}, "CW"),
                              constant_factor(t, {1, 1}, "CW")};
    CHECK(filter_loss(t, fs, 0.1).item() == 0.0);
  }
  // orthogonal cross-domain factors: d = 1 >= m, hinge inactive
  {
    std::vector<FogFactor> fs{constant_factor(t, {1, 0}, "CW"),
                              constant_factor(t, {0, 1}, "RF")};
    CHECK(filter_loss(t, fs, 0.1).item() == 0.0);
  }
  // same-domain pair at cosine distance 0.3 with margin 0.1 -> 0.04
  {
    std::vector<FogFactor> fs{
        constant_factor(t, {1, 0}, "SF"),
        constant_factor(t, {0.7, std::sqrt(0.51)}, "SF")};
    CHECK(std::abs(filter_loss(t, fs, 0.1).item() - 0.04) < 1e-9);
  }
}

TEST_CASE("filter loss properties") {
  Tape t;
  // perfectly arranged factors: same together, cross apart -> exactly zero
  {
    std::vector<FogFactor> fs{constant_factor(t, {2, 0}, "CW"),
                              constant_factor(t, {1, 0}, "CW"),
                              constant_factor(t, {0, 3}, "RF")};
    CHECK(filter_loss(t, fs, 0.1).item() == 0.0);
  }
  // cosine distance ignores positive rescaling of any one factor
  {
    std::vector<FogFactor> fs{constant_factor(t, {0.3, 0.8}, "CW"),
                              constant_factor(t, {0.9, 0.2}, "CW"),
                              constant_factor(t, {0.5, 0.6}, "RF")};
    const double base = filter_loss(t, fs, 0.3).item();
    fs[1] = constant_factor(t, {1.8, 0.4}, "CW");
    CHECK(std::abs(filter_loss(t, fs, 0.3).item() - base) <= 1e-9);
  }
  // guards
  {
    std::vector<FogFactor> one{constant_factor(t, {1, 0}, "CW")};
    CHECK_THROWS_AS(filter_loss(t, one, 0.1), DomainError);
    std::vector<FogFactor> zero{constant_factor(t, {0, 0}, "CW"),
                                constant_factor(t, {1, 0}, "CW")};
    CHECK_THROWS_AS(filter_loss(t, zero, 0.1), DomainError);
    std::vector<FogFactor> ok{constant_factor(t, {1, 0}, "CW"),
                              constant_factor(t, {0, 1}, "CW")};
    CHECK_THROWS_AS(filter_loss(t, ok, 0.0), DomainError);
    CHECK_THROWS_AS(filter_loss(t, ok, 2.0), DomainError);
  }
}

TEST_CASE("filter loss gradient away from the hinge point") {
  Rng rng(31);
  std::vector<double> a(4), b(4), c(4);
  for (int i = 0; i < 4; ++i) {
    a[static_cast<std::size_t>(i)] = rng.uniform(0.2, 1.0);
    b[static_cast<std::size_t>(i)] = rng.uniform(0.2, 1.0);
    c[static_cast<std::size_t>(i)] = rng.uniform(-1.0, -0.2);
  }
  auto fn = [](Tape& t, const std::vector<Tensor>& p) {
    std::vector<FogFactor> fs(3);
    fs[0] = {p[0], "CW", "C1", 0};
    fs[1] = {p[1], "CW", "C1", 0};
    fs[2] = {p[2], "RF", "C1", 0};
    return filter_loss(t, fs, 0.1);
  };
  CHECK(grad_check(fn, {{{4}, a}, {{4}, b}, {{4}, c}}, 1e-5, 55) < 1e-5);
}

TEST_CASE("content filter loss pairs by CW-SF counterpart") {
  Tape t;
  // counterpart pair with identical factors contributes zero
  {
    std::vector<FogFactor> fs{constant_factor(t, {0.5, 0.5}, "CW", 7),
                              constant_factor(t, {0.5, 0.5}, "SF", 7)};
    CHECK(content_filter_loss(t, fs, 0.1).item() == 0.0);
  }
  // CW-RF pair at distance 0.05 with margin 0.1 -> (0.1-0.05)^2
  {
    std::vector<FogFactor> fs{
        constant_factor(t, {1, 0}, "CW", 1),
        constant_factor(t, {0.95, std::sqrt(1.0 - 0.95 * 0.95)}, "RF", 9)};
    CHECK(std::abs(content_filter_loss(t, fs, 0.1).item() - 0.0025) < 1e-9);
  }
  // single factor: empty pair set
  {
    std::vector<FogFactor> fs{constant_factor(t, {1, 0}, "CW", 1)};
    CHECK(content_filter_loss(t, fs, 0.1).item() == 0.0);
  }
  // same domains but different pair ids count as a negative pair
  {
    std::vector<FogFactor> close{constant_factor(t, {1, 0}, "CW", 1),
                                 constant_factor(t, {1, 0}, "SF", 2)};
    CHECK(content_filter_loss(t, close, 0.1).item() ==
          doctest::Approx(0.01).epsilon(1e-12));
  }
}

TEST_CASE("filter checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "foginv_fpf";
  std::filesystem::remove_all(dir);
  auto f = FogPassFilter::build(21, "R1", 36, 8);
  f.save(dir);
  auto back = FogPassFilter::load(dir);
  CHECK(back.tap() == "R1");
  CHECK(back.in_dim() == 36);
  CHECK(back.dim() == 8);
  for (std::size_t i = 0; i < f.params().size(); ++i) {
    CHECK(back.params()[i] == f.params()[i]);
  }
  std::filesystem::remove_all(dir);
}
