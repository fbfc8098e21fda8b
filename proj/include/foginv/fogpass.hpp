#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "foginv/tensor.hpp"

namespace foginv {

// Vectorized upper triangle of a channel-correlation (Gram) matrix: the style
// descriptor **u** fed to the filters.
struct GramVector {
  Tensor values;  // [c*(c+1)/2]
  std::string source_tap;
  int channels = 0;
  int spatial_size = 0;  // n_l of the tap that produced it
};

// Small two-layer perceptron mapping a style vector to a low-dimensional
// factor: in -> 2*dim (leaky rectifier) -> dim.
class FogPassFilter {
 public:
  static FogPassFilter build(std::uint64_t seed, std::string tap, int in_dim,
                             int dim);

  const std::string& tap() const { return tap_; }
  int in_dim() const { return in_dim_; }
  int dim() const { return dim_; }
  const std::vector<Shape>& shapes() const { return shapes_; }
  std::vector<std::vector<double>>& params() { return params_; }
  const std::vector<std::vector<double>>& params() const { return params_; }

  // Leaves in order w1, b1, w2, b2.
  std::vector<Tensor> place(Tape& tape, bool requires_grad) const;

  void save(const std::filesystem::path& dir) const;
  static FogPassFilter load(const std::filesystem::path& dir);

 private:
  std::string tap_;
  int in_dim_ = 0;
  int dim_ = 0;
  std::vector<Shape> shapes_;
  std::vector<std::vector<double>> params_;
};

struct FogFactor {
  Tensor values;  // [dim]
  std::string domain;  // CW | SF | RF
  std::string tap;
  std::uint64_t pair_id = 0;
};

// G[i][j] = <channel i, channel j> over flattened spatial positions.
Tensor gram(Tape& tape, Tensor feature_map);  // [c,h,w] -> [c,c]

// Row-major entries with column >= row. Rejects input that is not symmetric
// within 1e-9 (relative to the largest entry).
GramVector upper_tri_vec(Tape& tape, Tensor g, const std::string& source_tap,
                         int spatial_size);

// The pipeline's style descriptor: gram scaled by 1/n_l, then vectorized, so
// filter inputs are resolution-independent.
GramVector style_vector(Tape& tape, Tensor feature_map,
                        const std::string& source_tap);

FogFactor fog_factor(Tape& tape, const FogPassFilter& filter,
                     const std::vector<Tensor>& filter_leaves,
                     const GramVector& u);

// Contrastive loss over every unordered pair: same-domain pairs pay
// [d - m]+^2, cross-domain pairs pay [m - d]+^2, d = cosine distance.
Tensor filter_loss(Tape& tape, const std::vector<FogFactor>& factors,
                   double margin);

// Same functional form, but "same" means a CW-SF pair sharing pair_id.
Tensor content_filter_loss(Tape& tape, const std::vector<FogFactor>& factors,
                           double margin);

}  // namespace foginv
