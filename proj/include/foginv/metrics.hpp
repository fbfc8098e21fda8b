#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "foginv/config.hpp"
#include "foginv/fogpass.hpp"
#include "foginv/segnet.hpp"
#include "foginv/trainer.hpp"

namespace foginv {

// ---------------------------------------------------------------------------
// Segmentation accuracy

// Rows are ground truth, columns prediction. Pixels whose truth label is the
// ignore value are not counted.
struct ConfusionMatrix {
  explicit ConfusionMatrix(int num_classes);
  void add(std::span<const std::uint8_t> truth,
           std::span<const std::uint8_t> pred);
  std::int64_t at(int truth_class, int pred_class) const;
  std::int64_t total() const;

  int num_classes = 0;
  std::vector<std::int64_t> counts;  // [C*C] row-major
};

struct MiouResult {
  std::vector<double> per_class;  // 0 where !present[c]
  std::vector<bool> present;      // class appears in truth or prediction
  double mean = 0.0;              // over present classes only
};

MiouResult miou_from_confusion(const ConfusionMatrix& cm);
MiouResult miou(std::span<const std::uint8_t> truth,
                std::span<const std::uint8_t> pred, int num_classes);

// ---------------------------------------------------------------------------
// Clustering

// Lloyd's iterations from a seeded k-means++ start. Deterministic in the
// seed: distance ties pick the lower center index, and an emptied cluster is
// reseeded at the point farthest from its current center.
std::vector<int> kmeans(const std::vector<std::vector<double>>& points, int k,
                        std::uint64_t seed, int max_iters = 100);

struct ClusterIndices {
  double ari = 0, nmi = 0, ami = 0;
};

// Agreement between a clustering and reference labels. ARI by pair counting
// with expected-index correction; NMI normalized by the arithmetic mean of
// the entropies; AMI corrected by the permutation-model expected mutual
// information. Two trivial single-cluster partitions agree perfectly: 1/1/1.
ClusterIndices clustering_indices(const std::vector<int>& assignments,
                                  const std::vector<int>& truth);

// ---------------------------------------------------------------------------
// Set distances

struct FactorSet {
  std::vector<std::vector<double>> points;
  std::vector<std::string> domains;  // optional, aligned with points
};

enum class SetMetric { Cosine, Euclidean };

double cosine_distance(std::span<const double> a, std::span<const double> b);

// Symmetric mean of the two directed average nearest-neighbor distances.
double avg_hausdorff(const FactorSet& a, const FactorSet& b,
                     SetMetric metric = SetMetric::Cosine);

// 1 - mean over anchors of the overlap fraction between the k nearest
// neighbors in fog-factor space and in content-factor space (cosine
// distance, anchor excluded, distance ties broken by index). k is clamped to
// N-1.
double independence_score(const std::vector<std::vector<double>>& fog_factors,
                          const std::vector<std::vector<double>>& content_factors,
                          int k);

// ---------------------------------------------------------------------------
// Evaluation and analysis drivers

// Hard class prediction: argmax over the class axis of the logits.
std::vector<std::uint8_t> predict(const SegNetwork& net, const Sample& s);

// Homogeneous-fog counterpart of a clear-weather manifest row, synthesized in
// memory with the same 8-bit quantization the dataset writer applies, so it
// matches what an on-disk copy would load as.
Sample synth_sf(const Dataset& data, const ManifestRow& cw_row,
                const RunConfig& cfg);

// The analysis image stream: on-disk eval CW and RF plus an SF counterpart
// synthesized per CW row. Order: all CW, then their SF twins, then RF.
std::vector<Sample> eval_samples(const Dataset& data, const RunConfig& cfg);

// One forward pass worth of analysis products.
struct ImageFeatures {
  std::vector<std::uint8_t> prediction;           // [H*W]
  std::vector<std::vector<double>> style;         // per net.tap_layers entry
  std::vector<std::vector<double>> factors;       // per `filters` entry
};
ImageFeatures image_features(const SegNetwork& net,
                             const std::vector<const FogPassFilter*>& filters,
                             const Sample& s);

struct SplitEval {
  std::string domain;
  int images = 0;
  MiouResult res;
};

// Per-domain mIoU over every domain present in a split (labels required).
std::vector<SplitEval> evaluate_split(const SegNetwork& net,
                                      const Dataset& data,
                                      const std::string& split);

struct AnalyzeOptions {
  std::filesystem::path checkpoint;  // run under analysis; dir name = run id
  std::optional<std::filesystem::path> baseline;  // reference run
  std::filesystem::path data_root;
  std::filesystem::path out_dir;
  // Fog-pass filters to extract factors with, instead of each checkpoint's
  // own (e.g. the warm-up state, to compare nets under identical filters).
  std::optional<std::filesystem::path> filter_dir;
};

// Full diagnostic report over the eval-domain stream: per-domain mIoU,
// pairwise fog-factor set gaps, k-means agreement for factors and for raw
// style vectors, and independence scores against a freshly trained
// content-pass filter. Writes analysis.csv plus per-run factor dumps.
void analyze(const AnalyzeOptions& opts);

}  // namespace foginv
