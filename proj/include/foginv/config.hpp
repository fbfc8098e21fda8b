#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "foginv/scenegen.hpp"

namespace foginv {

// Which member of a style-matching pair is gradient-detached inside the
// matching loss. Bidirectional detaches neither; FogToClear detaches the
// clearer member (so only the foggier branch is pulled); ClearToFog the
// reverse.
enum class FsmDirection { Bidirectional, FogToClear, ClearToFog };

std::string to_string(FsmDirection d);
FsmDirection parse_fsm_direction(const std::string& s);  // throws ConfigError

// Complete description of a run. Every field has a flat `key = value`
// spelling (see set()); a serialized config reparses to an equal one.
struct RunConfig {
  // dataset
  std::string data_root = "data";
  int image_size = 64;
  int num_classes = 8;
  int train_cw = 400;  // SF counterparts implied 1:1
  int train_rf = 400;
  int eval_cw = 100;
  int eval_rf = 100;
  double beta = 0.005;

  // network
  int width_base = 8;
  std::vector<std::string> tap_layers = {"C1", "R1"};
  int factor_dim = 64;

  // loss weights. The style-matching normalizer 1/(4 d^2 n^2) is ~2e-10 at
  // this tap geometry, so the weight that balances it against an O(1)
  // cross-entropy is large. 1e10 puts the weighted term near the
  // cross-entropy scale and measurably closes the cross-domain style gap
  // without hurting segmentation; 1e11 stalls the cross-entropy.
  double lambda_fsm = 1e10;
  double lambda_con = 1e-4;
  double margin = 0.1;

  // schedule
  int batch_per_domain = 4;
  int pretrain_iters = 2000;  // phase 1: clear-weather supervision only
  int warmup_iters = 500;     // phase 2: filters only
  int total_iters = 6000;     // phases 2+3 combined
  int checkpoint_every = 0;   // 0 = phase boundaries only

  // segmentation optimizer (SGD + momentum, polynomial decay)
  double seg_momentum = 0.9;
  double lr_encoder = 6e-4;
  double lr_decoder = 6e-3;
  double poly_power = 0.5;

  // filter optimizer (Adamax)
  double filter_lr_c1 = 5e-4;
  double filter_lr_r1 = 1e-3;

  FsmDirection fsm_direction = FsmDirection::Bidirectional;

  // Mean within each domain-pair sub-batch ("mean") or plain sum ("sum");
  // the three sub-batch objectives are always summed.
  std::string pair_reduction = "mean";

  bool augment_flip = true;  // seeded horizontal flips during training
  std::uint64_t master_seed = 1;

  // Assigns one field from its flat spelling; throws ConfigError on an
  // unknown key or an unparsable value.
  void set(const std::string& key, const std::string& value);

  // Applies every `key = value` line of the file on top of *this.
  void load_file(const std::filesystem::path& path);

  // All keys in a fixed order; round-trips through load via a string stream.
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  void validate() const;  // throws ConfigError on a broken invariant

  double filter_lr(const std::string& tap) const;
  DatasetConfig dataset_config() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace foginv
