#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "foginv/config.hpp"
#include "foginv/errors.hpp"

using namespace foginv;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& body) {
  const fs::path p = fs::temp_directory_path() / name;
  std::ofstream(p, std::ios::binary) << body;
  return p;
}

}  // namespace

TEST_CASE("defaults match the documented desk scale") {
  RunConfig c;
  CHECK(c.image_size == 64);
  CHECK(c.num_classes == 8);
  CHECK(c.train_cw == 400);
  CHECK(c.eval_rf == 100);
  CHECK(c.beta == doctest::Approx(0.005));
  CHECK(c.margin == doctest::Approx(0.1));
  CHECK(c.lambda_con == doctest::Approx(1e-4));
  CHECK(c.batch_per_domain == 4);
  CHECK(c.pretrain_iters == 2000);
  CHECK(c.warmup_iters == 500);
  CHECK(c.total_iters == 6000);
  CHECK(c.seg_momentum == doctest::Approx(0.9));
  CHECK(c.lr_encoder == doctest::Approx(6e-4));
  CHECK(c.lr_decoder == doctest::Approx(6e-3));
  CHECK(c.poly_power == doctest::Approx(0.5));
  CHECK(c.filter_lr("C1") == doctest::Approx(5e-4));
  CHECK(c.filter_lr("R1") == doctest::Approx(1e-3));
  CHECK(c.fsm_direction == FsmDirection::Bidirectional);
  CHECK(c.tap_layers == std::vector<std::string>{"C1", "R1"});
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("file parsing: comments, blank lines, spacing") {
  const auto p = temp_file("foginv_cfg_parse.txt",
                           "# a comment\n"
                           "\n"
                           "beta=0.02\n"
                           "  tap_layers = C1 , R1  # trailing comment\n"
                           "master_seed = 42\n"
                           "fsm_direction = fog_to_clear\n");
  RunConfig c;
  c.load_file(p);
  CHECK(c.beta == doctest::Approx(0.02));
  CHECK(c.tap_layers == std::vector<std::string>{"C1", "R1"});
  CHECK(c.master_seed == 42);
  CHECK(c.fsm_direction == FsmDirection::FogToClear);
  std::remove(p.string().c_str());
}

TEST_CASE("precedence: flag override > config file > default") {
  const auto p = temp_file("foginv_cfg_prec.txt", "lambda_con = 0.5\nbeta = 0.01\n");
  RunConfig c;              // layer 1: defaults
  c.load_file(p);           // layer 2: file
  c.set("beta", "0.03");    // layer 3: flag
  CHECK(c.lambda_con == doctest::Approx(0.5));   // file beats default
  CHECK(c.beta == doctest::Approx(0.03));        // flag beats file
  CHECK(c.margin == doctest::Approx(0.1));       // untouched default
  std::remove(p.string().c_str());
}

TEST_CASE("unknown keys and malformed lines are rejected") {
  RunConfig c;
  CHECK_THROWS_AS(c.set("no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("beta", "fast"), ConfigError);
  CHECK_THROWS_AS(c.set("image_size", "64.5"), ConfigError);
  CHECK_THROWS_AS(c.set("fsm_direction", "sideways"), ConfigError);
  const auto p = temp_file("foginv_cfg_bad.txt", "beta 0.01\n");
  CHECK_THROWS_AS(c.load_file(p), ConfigError);
  std::remove(p.string().c_str());
}

TEST_CASE("validate() enforces the run invariants") {
  const auto broken = [](const char* key, const char* value) {
    RunConfig c;
    c.set(key, value);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  broken("lr_encoder", "0");
  broken("lr_decoder", "-1e-3");
  broken("filter_lr_c1", "0");
  broken("batch_per_domain", "1");
  broken("warmup_iters", "9000");  // > total_iters
  broken("tap_layers", "C9");
  broken("num_classes", "3");
  broken("seg_momentum", "1.0");
  broken("pair_reduction", "max");

  // the phase-boundary case warmup == total is allowed
  RunConfig c;
  c.set("total_iters", "500");
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("serialize round-trips to an equal config") {
  RunConfig c;
  c.set("beta", "0.0125");
  c.set("lambda_fsm", "3e9");
  c.set("tap_layers", "R1");
  c.set("fsm_direction", "clear_to_fog");
  c.set("augment_flip", "false");
  c.set("master_seed", "9876543210");
  const auto p = temp_file("foginv_cfg_rt.txt", c.serialize());
  RunConfig back;
  back.load_file(p);
  CHECK(back.serialize() == c.serialize());
  CHECK(back.beta == doctest::Approx(0.0125).epsilon(1e-15));
  CHECK(back.tap_layers == std::vector<std::string>{"R1"});
  CHECK(back.fsm_direction == FsmDirection::ClearToFog);
  CHECK(back.augment_flip == false);
  CHECK(back.master_seed == 9876543210ULL);
  std::remove(p.string().c_str());
}

TEST_CASE("dataset_config mirrors the dataset fields") {
  RunConfig c;
  c.set("data_root", "/tmp/somewhere");
  c.set("train_cw", "12");
  c.set("beta", "0.02");
  c.set("master_seed", "7");
  const DatasetConfig d = c.dataset_config();
  CHECK(d.root == fs::path("/tmp/somewhere"));
  CHECK(d.train_cw == 12);
  CHECK(d.fog.beta == doctest::Approx(0.02));
  CHECK(d.master_seed == 7);
  CHECK(d.image_size == 64);
}
