#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "foginv/tensor.hpp"

namespace foginv {

struct LayerSpec {
  std::string name;  // parameter name, doubles as the checkpoint file stem
  Shape shape;
  bool decoder = false;  // learning-rate group: encoder vs decoder
};

// Encoder-decoder net: stem conv (tap C1), three residual blocks (first one
// tap R1), then two upsample+conv stages fusing the stride-2 skip and a 1x1
// head. Parameters live host-side; forward places them on a tape.
class SegNetwork {
 public:
  static SegNetwork build(std::uint64_t seed, int num_classes, int width_base);

  const std::vector<LayerSpec>& specs() const { return specs_; }
  std::vector<std::vector<double>>& params() { return params_; }
  const std::vector<std::vector<double>>& params() const { return params_; }
  int num_classes() const { return num_classes_; }
  int width_base() const { return width_base_; }
  std::int64_t num_parameters() const;

  // Leaves in spec order; one placement is shared by every image in a batch
  // so gradients accumulate across the batch.
  std::vector<Tensor> place(Tape& tape, bool requires_grad) const;

  void save(const std::filesystem::path& dir) const;
  static SegNetwork load(const std::filesystem::path& dir);

  std::vector<std::string> tap_layers{"C1", "R1"};

 private:
  int num_classes_ = 0;
  int width_base_ = 0;
  std::vector<LayerSpec> specs_;
  std::vector<std::vector<double>> params_;
};

struct ForwardResult {
  Tensor logits;  // [H,W,C]
  Tensor probs;   // [H,W,C], softmax over the class axis
  std::vector<std::pair<std::string, Tensor>> taps;  // [c_l, h_l, w_l] each
};

// Full forward pass. `image` is an [H,W,3] tensor on the same tape; `leaves`
// must align with net.specs() (usually from net.place()).
ForwardResult seg_forward(Tape& tape, const SegNetwork& net,
                          const std::vector<Tensor>& leaves, Tensor image);

// Only the layers needed to produce the requested taps (stem, and the first
// residual block when R1 is wanted) — the cheap path for filter updates.
std::vector<std::pair<std::string, Tensor>> seg_forward_taps(
    Tape& tape, const SegNetwork& net, const std::vector<Tensor>& leaves,
    Tensor image);

}  // namespace foginv
