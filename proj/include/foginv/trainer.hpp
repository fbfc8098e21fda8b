#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "foginv/config.hpp"
#include "foginv/fogpass.hpp"
#include "foginv/rng.hpp"
#include "foginv/segnet.hpp"

namespace foginv {

struct ManifestRow {
  std::string path;    // relative to the dataset root, extensionless stem
  std::string domain;  // CW | SF | RF
  std::string split;   // train | eval
  std::uint64_t pair_id = 0;
  std::uint64_t seed = 0;
  double beta = 0.0;
  std::array<double, 3> airlight{};
};

struct Sample {
  std::vector<double> image;         // [H,W,3] in [0,1]
  std::vector<std::uint8_t> labels;  // [H,W]; empty when not loaded
  std::string domain;
  std::uint64_t pair_id = 0;
  int height = 0;
  int width = 0;
};

// Manifest-backed view of a generated dataset. Label files are only touched
// when a load asks for them, and every such read is logged so the
// no-real-fog-labels contract can be audited.
class Dataset {
 public:
  explicit Dataset(std::filesystem::path root);

  const std::vector<ManifestRow>& rows(const std::string& split,
                                       const std::string& domain) const;
  bool has(const std::string& split, const std::string& domain) const;
  const ManifestRow& sf_counterpart(std::uint64_t pair_id) const;
  Sample load(const ManifestRow& row, bool with_labels) const;

  const std::filesystem::path& root() const { return root_; }
  const std::vector<std::string>& label_files_read() const {
    return label_reads_;
  }

 private:
  std::filesystem::path root_;
  std::map<std::pair<std::string, std::string>, std::vector<ManifestRow>>
      by_split_domain_;
  std::map<std::uint64_t, ManifestRow> sf_by_pair_;
  mutable std::vector<std::string> label_reads_;
};

// Index-aligned domain slices: (cw[i], sf[i]) share a pair id, and the
// cross-domain pair slices are (cw[i], rf[i]) and (sf[i], rf[i]).
struct MiniBatch {
  std::vector<Sample> cw, sf, rf;
};

// Uniform without-replacement draw of CW and RF rows plus the SF
// counterparts. CW labels and SF labels are loaded; RF labels never are.
// With `flip`, each CW/SF pair shares one horizontal-flip coin and each RF
// image gets its own.
MiniBatch sample_minibatch(const Dataset& data, Rng& rng, int batch_size,
                           bool flip);

void hflip(Sample& s);

// v <- momentum * v + g; p <- p - lr * v. Slots are caller-chosen indices;
// state appears on first use.
struct SgdMomentum {
  explicit SgdMomentum(double momentum) : momentum(momentum) {}
  void step(std::size_t slot, std::vector<double>& p,
            std::span<const double> g, double lr);
  double momentum;
  std::vector<std::vector<double>> velocity;
};

// m <- b1 m + (1-b1) g; u <- max(b2 u, |g|); p <- p - lr/(1-b1^t) * m/(u+eps).
struct Adamax {
  void step(std::size_t slot, std::vector<double>& p,
            std::span<const double> g, double lr);
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  struct Slot {
    std::vector<double> m, u;
    std::int64_t t = 0;
  };
  std::vector<Slot> slots;
};

// lr0 * (1 - iter/total)^power
double poly_decay(double lr0, int iter, int total, double power);

struct TrainLogRow {
  int iter = 0;
  std::string phase;  // pretrain | warmup | alternate
  double filter_loss_c1 = 0, filter_loss_r1 = 0;
  double seg_ce = 0, fsm = 0, con = 0, total = 0;
  double lr_encoder = 0, lr_decoder = 0;
};

// Three-phase run: clear-weather pretraining, filter-only warm-up, then
// strict per-iteration alternation of one filter update and one network
// update on a freshly sampled batch.
class Trainer {
 public:
  Trainer(RunConfig cfg, const Dataset& data);

  // One update of every fog-pass filter on `batch`; the network is frozen
  // (placed without gradients). Returns the per-tap loss values.
  std::vector<std::pair<std::string, double>> filter_step(
      const MiniBatch& batch);

  struct SegStats {
    double ce = 0, fsm = 0, con = 0, total = 0;
  };

  // One update of the network on `batch` with the filters frozen. `ce`,
  // `fsm` and `con` are the unweighted parts; `total` applies the weights.
  SegStats seg_step(const MiniBatch& batch);

  // Clear-weather supervision only; shares the network optimizer schedule.
  SegStats pretrain_step(const MiniBatch& batch);

  // Runs all phases, writes train_log.csv plus the baseline / warmup / final
  // checkpoints under out_dir. Aborts (after saving last_good) the moment a
  // loss turns non-finite.
  void train(const std::filesystem::path& out_dir);

  void save_checkpoint(const std::filesystem::path& dir) const;

  MiniBatch batch_for(const char* tag, int iter) const;

  SegNetwork& net() { return net_; }
  const SegNetwork& net() const { return net_; }
  std::vector<FogPassFilter>& filters() { return filters_; }
  const std::vector<TrainLogRow>& log() const { return log_; }
  const RunConfig& config() const { return cfg_; }

  // Learning rates the next network update will use.
  std::pair<double, double> current_seg_lrs() const;

 private:
  SegStats seg_update(const MiniBatch& batch, bool cw_only);

  RunConfig cfg_;
  const Dataset& data_;
  SegNetwork net_;
  std::vector<FogPassFilter> filters_;  // aligned with cfg_.tap_layers
  SgdMomentum seg_opt_;
  Adamax filter_opt_;
  int seg_steps_done_ = 0;
  int seg_steps_total_ = 0;
  std::vector<TrainLogRow> log_;
};

void write_train_log(const std::filesystem::path& path,
                     const std::vector<TrainLogRow>& rows);

// Builds an input-sized filter for `tap` of the network's tap geometry.
FogPassFilter make_filter_for_tap(const SegNetwork& net, const std::string& tap,
                                  int factor_dim, std::uint64_t seed);

// One content-filter update on `batch` ("same" = a CW/SF pair sharing
// pair_id); the network is frozen. Returns the loss value.
double content_filter_step(const SegNetwork& net,
                           std::vector<FogPassFilter>& filters, Adamax& opt,
                           const MiniBatch& batch, const RunConfig& cfg);

// Trains fresh content-pass filters against the frozen network for
// warmup_iters batches; used by the independence analysis.
std::vector<FogPassFilter> train_content_filters(const RunConfig& cfg,
                                                 const SegNetwork& net,
                                                 const Dataset& data);

}  // namespace foginv
