#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include "foginv/errors.hpp"
#include "foginv/gradbattery.hpp"

using namespace foginv;

namespace {

bool has_case(const CheckReport& rep, const std::string& name) {
  return std::any_of(rep.cases.begin(), rep.cases.end(),
                     [&](const CheckCase& c) { return c.name == name; });
}

}  // namespace

TEST_CASE("scale names parse and bad ones are rejected") {
  CHECK(parse_check_scale("micro") == CheckScale::Micro);
  CHECK(parse_check_scale("small") == CheckScale::Small);
  CHECK_THROWS_AS(parse_check_scale("tiny"), ConfigError);
  CHECK_THROWS_AS(parse_check_scale(""), ConfigError);
}

TEST_CASE("micro battery passes with every family represented") {
  const CheckReport rep = run_grad_checks(CheckScale::Micro, 7);
  CHECK(rep.all_passed());
  CHECK(rep.worst() < rep.tolerance);
  CHECK(rep.cases.size() >= 41);

  // one case per primitive family and per loss
  for (const char* name :
       {"add", "sub", "mul", "div", "scale", "add-scalar", "clamp-min",
        "leaky-relu", "log", "square", "sqrt", "reshape", "transpose",
        "concat", "gather-repeats", "matmul", "dot", "l2-norm", "sum", "mean",
        "sum-axis", "mean-axis", "conv3x3-s1p1", "conv3x3-s1p0",
        "conv3x3-s2p1", "conv1x1", "upsample2x", "softmax", "gram",
        "style-vector", "factor-norm-vs-filter", "contrastive-fog",
        "contrastive-content", "seg-ce", "fsm-pair", "consistency",
        "objective-cw-sf", "objective-cw-rf", "objective-step-total",
        "fsm-through-net", "contrastive-through-taps"}) {
    CAPTURE(name);
    CHECK(has_case(rep, name));
  }

  // no case is vacuous: a loss that ignores its parameters reports exactly 0
  for (const auto& c : rep.cases) {
    CAPTURE(c.name);
    CHECK(c.max_rel_error > 0.0);
  }
}

TEST_CASE("small battery passes") {
  const CheckReport rep = run_grad_checks(CheckScale::Small, 7);
  CHECK(rep.all_passed());
  CHECK(rep.cases.size() >= 41);
}

TEST_CASE("reported errors are identical across reruns") {
  const CheckReport a = run_grad_checks(CheckScale::Micro, 123);
  const CheckReport b = run_grad_checks(CheckScale::Micro, 123);
  REQUIRE(a.cases.size() == b.cases.size());
  for (std::size_t i = 0; i < a.cases.size(); ++i) {
    CHECK(a.cases[i].name == b.cases[i].name);
    CHECK(a.cases[i].max_rel_error == b.cases[i].max_rel_error);
    CHECK(a.cases[i].attempts == b.cases[i].attempts);
  }
}

TEST_CASE("report verdict flips on a failing case") {
  CheckReport rep;
  rep.cases.push_back({"good", 1e-9, 1});
  CHECK(rep.all_passed());
  CHECK(rep.worst() == 1e-9);
  rep.cases.push_back({"bad", 3e-4, 1});
  CHECK_FALSE(rep.all_passed());
  CHECK(rep.worst() == 3e-4);

  std::ostringstream os;
  print_report(os, rep);
  const std::string text = os.str();
  CHECK(text.find("good") != std::string::npos);
  CHECK(text.find("bad") != std::string::npos);
  CHECK(text.find("FAIL") != std::string::npos);
  CHECK(text.find("2 cases") != std::string::npos);
}

TEST_CASE("printed report has one line per case plus a summary") {
  const CheckReport rep = run_grad_checks(CheckScale::Micro, 9);
  std::ostringstream os;
  print_report(os, rep);
  const std::string text = os.str();
  CHECK(static_cast<std::size_t>(
            std::count(text.begin(), text.end(), '\n')) == rep.cases.size() + 1);
  CHECK(text.find("PASS") != std::string::npos);
  CHECK(text.find("FAIL") == std::string::npos);
}
