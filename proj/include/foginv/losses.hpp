#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "foginv/fogpass.hpp"
#include "foginv/tensor.hpp"

namespace foginv {

inline constexpr std::uint8_t kIgnoreLabel = 255;
inline constexpr double kProbFloor = 1e-12;

struct LossWeights {
  double lambda_fsm = 5e-8;
  double lambda_con = 1e-4;
  double margin = 0.1;
};

// One style-matching pair at one tap: the two factors plus the normalizer
// inputs of the matching loss (factor dim d_l, tap spatial size n_l).
struct FsmPair {
  FogFactor a;
  FogFactor b;
  int d_l = 0;
  int n_l = 0;
};

// -(1/n) sum of log-probabilities at the true class; ignore-label pixels are
// excluded from both the sum and n. probs is [H,W,C], labels length H*W.
Tensor seg_ce(Tape& tape, Tensor probs, std::span<const std::uint8_t> labels);

// (1 / (4 d_l^2 n_l^2)) * sum_i (f_a[i] - f_b[i])^2.
Tensor fsm_loss(Tape& tape, const FogFactor& f_a, const FogFactor& f_b,
                int d_l, int n_l);

// Sum over pixels of KL(P_cw[i] || P_sf[i]); gradients reach both arguments.
Tensor consistency_loss(Tape& tape, Tensor p_cw, Tensor p_sf);

// Labeled-pair objective: CE on both members + weighted style matching over
// the taps + weighted prediction consistency.
Tensor objective_cw_sf(Tape& tape, Tensor probs_cw, Tensor probs_sf,
                       std::span<const std::uint8_t> labels,
                       const std::vector<FsmPair>& fsm_pairs,
                       const LossWeights& weights);

// Half-labeled-pair objective: CE on the labeled member only + weighted style
// matching against the real-fog member. Passing labels for the RF member is a
// contract violation and is rejected.
Tensor objective_d_rf(Tape& tape, Tensor probs_d,
                      std::span<const std::uint8_t> labels_d,
                      const std::vector<FsmPair>& fsm_pairs,
                      const LossWeights& weights,
                      std::span<const std::uint8_t> rf_labels = {});

}  // namespace foginv
