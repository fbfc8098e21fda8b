#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "foginv/losses.hpp"
#include "foginv/rng.hpp"

using namespace foginv;

namespace {

FogFactor factor(Tape& t, std::vector<double> v, std::string domain = "CW") {
  const int n = static_cast<int>(v.size());
  FogFactor f;
  f.values = t.constant({n}, std::move(v));
  f.domain = std::move(domain);
  return f;
}

Tensor softmax_probs(Tape& t, const std::vector<double>& logits, int h, int w,
                     int c) {
  return t.softmax(t.constant({h, w, c}, logits), 2);
}

}  // namespace

TEST_CASE("cross entropy hand values") {
  Tape t;
  // probability 1 on the true class everywhere -> 0
  {
    auto p = t.constant({1, 2, 2}, {1, 0, 0, 1});
    const std::uint8_t y[] = {0, 1};
    CHECK(seg_ce(t, p, y).item() == 0.0);
  }
  // uniform over 8 classes -> ln 8
  {
    auto p = t.constant({2, 2, 8}, std::vector<double>(32, 1.0 / 8.0));
    const std::uint8_t y[] = {3, 0, 7, 5};
    CHECK(std::abs(seg_ce(t, p, y).item() - std::log(8.0)) < 1e-9);
    CHECK(seg_ce(t, p, y).item() == doctest::Approx(2.0794).epsilon(1e-4));
  }
  // two pixels: (0.9,0.1) true 0 and (0.4,0.6) true 1
  {
    auto p = t.constant({1, 2, 2}, {0.9, 0.1, 0.4, 0.6});
    const std::uint8_t y[] = {0, 1};
    const double want = -(std::log(0.9) + std::log(0.6)) / 2.0;
    CHECK(std::abs(seg_ce(t, p, y).item() - want) < 1e-9);
    CHECK(want == doctest::Approx(0.30811).epsilon(1e-4));
  }
}

TEST_CASE("cross entropy ignore handling") {
  Tape t;
  auto p = t.constant({1, 2, 2}, {0.9, 0.1, 0.4, 0.6});
  const std::uint8_t half[] = {0, kIgnoreLabel};
  CHECK(std::abs(seg_ce(t, p, half).item() + std::log(0.9)) < 1e-12);
  const std::uint8_t none[] = {kIgnoreLabel, kIgnoreLabel};
  CHECK_THROWS_AS(seg_ce(t, p, none), DomainError);
  const std::uint8_t bad[] = {2, 0};
  CHECK_THROWS_AS(seg_ce(t, p, bad), DomainError);
  const std::uint8_t wrong_count[] = {0};
  CHECK_THROWS_AS(seg_ce(t, p, wrong_count), ShapeError);
}

TEST_CASE("fog style matching hand values") {
  Tape t;
  auto a = factor(t, {1, 0});
  auto b = factor(t, {0, 1});
  CHECK(fsm_loss(t, a, a, 2, 1).item() == 0.0);
  CHECK(std::abs(fsm_loss(t, a, b, 2, 1).item() - 0.125) < 1e-9);
  // quadratic in a common scale factor
  auto a3 = factor(t, {3, 0});
  auto b3 = factor(t, {0, 3});
  CHECK(std::abs(fsm_loss(t, a3, b3, 2, 1).item() -
                 9.0 * fsm_loss(t, a, b, 2, 1).item()) < 1e-12);
  // the normalizer tracks d_l and n_l
  CHECK(std::abs(fsm_loss(t, a, b, 2, 2).item() - 0.125 / 4.0) < 1e-12);
  auto c = factor(t, {1, 0, 0});
  CHECK_THROWS_AS(fsm_loss(t, a, c, 2, 1), ShapeError);
}

TEST_CASE("consistency loss hand values and positivity") {
  Tape t;
  auto p = softmax_probs(t, {0.3, -1.2, 0.8, 0.1, 0.0, 2.0}, 1, 2, 3);
  CHECK(consistency_loss(t, p, p).item() == 0.0);

  auto cw = t.constant({1, 1, 2}, {1.0, 0.0});
  auto sf = t.constant({1, 1, 2}, {0.5, 0.5});
  CHECK(std::abs(consistency_loss(t, cw, sf).item() - std::log(2.0)) < 1e-10);

  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> la(24), lb(24);
    for (auto& x : la) x = rng.uniform(-3.0, 3.0);
    for (auto& x : lb) x = rng.uniform(-3.0, 3.0);
    auto pa = softmax_probs(t, la, 2, 3, 4);
    auto pb = softmax_probs(t, lb, 2, 3, 4);
    CHECK(consistency_loss(t, pa, pb).item() >= -1e-12);
  }
}

TEST_CASE("labeled-pair objective decomposes into its terms") {
  Tape t;
  Rng rng(14);
  std::vector<double> lcw(2 * 2 * 4), lsf(2 * 2 * 4);
  for (auto& x : lcw) x = rng.uniform(-2.0, 2.0);
  for (auto& x : lsf) x = rng.uniform(-2.0, 2.0);
  const std::uint8_t labels[] = {0, 3, 1, 2};

  auto build_pairs = [&](Tape& tp) {
    std::vector<FsmPair> pairs;
    FsmPair p1{factor(tp, {0.4, 0.8}, "CW"), factor(tp, {0.1, 0.9}, "SF"), 2, 5};
    FsmPair p2{factor(tp, {1.0, 0.2}, "CW"), factor(tp, {0.8, 0.1}, "SF"), 2, 3};
    pairs.push_back(p1);
    pairs.push_back(p2);
    return pairs;
  };

  const LossWeights w{.lambda_fsm = 0.25, .lambda_con = 0.5, .margin = 0.1};
  auto pcw = softmax_probs(t, lcw, 2, 2, 4);
  auto psf = softmax_probs(t, lsf, 2, 2, 4);
  const double whole = objective_cw_sf(t, pcw, psf, labels, build_pairs(t), w).item();

  const double by_hand =
      seg_ce(t, pcw, labels).item() + seg_ce(t, psf, labels).item() +
      0.25 * (fsm_loss(t, build_pairs(t)[0].a, build_pairs(t)[0].b, 2, 5).item() +
              fsm_loss(t, build_pairs(t)[1].a, build_pairs(t)[1].b, 2, 3).item()) +
      0.5 * consistency_loss(t, pcw, psf).item();
  CHECK(std::abs(whole - by_hand) < 1e-12);

  // weight reductions
  const LossWeights off{.lambda_fsm = 0.0, .lambda_con = 0.0, .margin = 0.1};
  CHECK(std::abs(objective_cw_sf(t, pcw, psf, labels, build_pairs(t), off).item() -
                 (seg_ce(t, pcw, labels).item() + seg_ce(t, psf, labels).item())) <
        1e-12);
  // identical members: consistency and fsm terms vanish
  std::vector<FsmPair> same{{factor(t, {0.4, 0.8}, "CW"),
                             factor(t, {0.4, 0.8}, "SF"), 2, 5}};
  const LossWeights on{.lambda_fsm = 10.0, .lambda_con = 10.0, .margin = 0.1};
  CHECK(std::abs(objective_cw_sf(t, pcw, pcw, labels, same, on).item() -
                 2.0 * seg_ce(t, pcw, labels).item()) < 1e-12);
}

TEST_CASE("half-labeled objective and the real-fog label guard") {
  Tape t;
  Rng rng(15);
  std::vector<double> ld(2 * 2 * 4);
  for (auto& x : ld) x = rng.uniform(-2.0, 2.0);
  const std::uint8_t labels[] = {1, 0, 2, 3};
  auto pd = softmax_probs(t, ld, 2, 2, 4);

  std::vector<FsmPair> pairs{{factor(t, {0.4, 0.8}, "CW"),
                              factor(t, {0.3, 0.7}, "RF"), 2, 4}};
  const LossWeights w{.lambda_fsm = 2.0, .lambda_con = 1e-4, .margin = 0.1};
  const double whole = objective_d_rf(t, pd, labels, pairs, w).item();
  const double by_hand = seg_ce(t, pd, labels).item() +
                         2.0 * fsm_loss(t, pairs[0].a, pairs[0].b, 2, 4).item();
  CHECK(std::abs(whole - by_hand) < 1e-12);

  const LossWeights off{.lambda_fsm = 0.0, .lambda_con = 1e-4, .margin = 0.1};
  CHECK(std::abs(objective_d_rf(t, pd, labels, pairs, off).item() -
                 seg_ce(t, pd, labels).item()) < 1e-12);

  std::vector<FsmPair> same{{factor(t, {0.4, 0.8}, "CW"),
                             factor(t, {0.4, 0.8}, "RF"), 2, 4}};
  CHECK(std::abs(objective_d_rf(t, pd, labels, same, w).item() -
                 seg_ce(t, pd, labels).item()) < 1e-12);

  const std::uint8_t rf_labels[] = {0, 1, 2, 3};
  CHECK_THROWS_AS(objective_d_rf(t, pd, labels, pairs, w, rf_labels),
                  DomainError);
}

TEST_CASE("losses are non-negative on random inputs") {
  Tape t;
  Rng rng(16);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> l(2 * 2 * 3);
    for (auto& x : l) x = rng.uniform(-4.0, 4.0);
    auto p = softmax_probs(t, l, 2, 2, 3);
    const std::uint8_t y[] = {0, 2, 1, 1};
    CHECK(seg_ce(t, p, y).item() >= 0.0);
    auto fa = factor(t, {rng.uniform(-1, 1), rng.uniform(-1, 1)});
    auto fb = factor(t, {rng.uniform(-1, 1), rng.uniform(-1, 1)});
    CHECK(fsm_loss(t, fa, fb, 2, 7).item() >= 0.0);
  }
}

TEST_CASE("loss gradients agree with central differences") {
  const std::uint8_t labels[] = {0, 2, 1, kIgnoreLabel};
  Rng rng(17);
  std::vector<double> lcw(2 * 2 * 3), lsf(2 * 2 * 3), fa(4), fb(4);
  for (auto& x : lcw) x = rng.uniform(-1.5, 1.5);
  for (auto& x : lsf) x = rng.uniform(-1.5, 1.5);
  for (auto& x : fa) x = rng.uniform(0.2, 1.0);
  for (auto& x : fb) x = rng.uniform(-1.0, -0.2);

  auto ce_fn = [&](Tape& t, const std::vector<Tensor>& p) {
    return seg_ce(t, t.softmax(p[0], 2), labels);
  };
  CHECK(grad_check(ce_fn, {{{2, 2, 3}, lcw}}, 1e-5, 71) < 1e-5);

  auto fsm_fn = [](Tape& t, const std::vector<Tensor>& p) {
    FogFactor a{p[0], "CW", "C1", 0}, b{p[1], "RF", "C1", 0};
    return fsm_loss(t, a, b, 4, 3);
  };
  CHECK(grad_check(fsm_fn, {{{4}, fa}, {{4}, fb}}, 1e-5, 72) < 1e-9);

  auto con_fn = [&](Tape& t, const std::vector<Tensor>& p) {
    return consistency_loss(t, t.softmax(p[0], 2), t.softmax(p[1], 2));
  };
  CHECK(grad_check(con_fn, {{{2, 2, 3}, lcw}, {{2, 2, 3}, lsf}}, 1e-5, 73) < 1e-5);

  auto obj_fn = [&](Tape& t, const std::vector<Tensor>& p) {
    std::vector<FsmPair> pairs{
        {FogFactor{p[2], "CW", "C1", 0}, FogFactor{p[3], "SF", "C1", 0}, 4, 3}};
    const LossWeights w{.lambda_fsm = 0.5, .lambda_con = 0.25, .margin = 0.1};
    return objective_cw_sf(t, t.softmax(p[0], 2), t.softmax(p[1], 2), labels,
                           pairs, w);
  };
  CHECK(grad_check(obj_fn,
                   {{{2, 2, 3}, lcw}, {{2, 2, 3}, lsf}, {{4}, fa}, {{4}, fb}},
                   1e-5, 74) < 1e-5);
}
