#include "foginv/losses.hpp"

namespace foginv {

Tensor seg_ce(Tape& t, Tensor probs, std::span<const std::uint8_t> labels) {
  const Shape& s = probs.shape();
  if (s.size() != 3) {
    throw ShapeError("seg_ce: probs must be [H,W,C], got " + shape_str(s));
  }
  const int h = s[0], w = s[1], c = s[2];
  if (labels.size() != static_cast<std::size_t>(h) * w) {
    throw ShapeError("seg_ce: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(h * w) + " pixels");
  }
  std::vector<double> onehot(static_cast<std::size_t>(h) * w * c, 0.0);
  std::int64_t counted = 0;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] == kIgnoreLabel) continue;
    if (labels[p] >= c) {
      throw DomainError("seg_ce: label " + std::to_string(labels[p]) +
                        " outside [0, " + std::to_string(c) + ")");
    }
    onehot[p * static_cast<std::size_t>(c) + labels[p]] = 1.0;
    ++counted;
  }
  if (counted == 0) throw DomainError("seg_ce: every pixel carries the ignore label");
  auto y = t.constant({h, w, c}, std::move(onehot));
  auto logp = t.log(t.clamp_min(probs, kProbFloor));
  return t.scale(t.sum(t.mul(y, logp)), -1.0 / static_cast<double>(counted));
}

Tensor fsm_loss(Tape& t, const FogFactor& f_a, const FogFactor& f_b, int d_l,
                int n_l) {
  if (f_a.values.size() != f_b.values.size()) {
    throw ShapeError("fsm_loss: factor lengths " +
                     std::to_string(f_a.values.size()) + " vs " +
                     std::to_string(f_b.values.size()));
  }
  if (d_l < 1 || n_l < 1) {
    throw DomainError("fsm_loss: d_l and n_l must be positive");
  }
  const double norm = 4.0 * static_cast<double>(d_l) * d_l *
                      static_cast<double>(n_l) * n_l;
  return t.scale(t.sum(t.square(t.sub(f_a.values, f_b.values))), 1.0 / norm);
}

Tensor consistency_loss(Tape& t, Tensor p_cw, Tensor p_sf) {
  if (p_cw.shape() != p_sf.shape()) {
    throw ShapeError("consistency_loss: " + shape_str(p_cw.shape()) + " vs " +
                     shape_str(p_sf.shape()));
  }
  auto log_cw = t.log(t.clamp_min(p_cw, kProbFloor));
  auto log_sf = t.log(t.clamp_min(p_sf, kProbFloor));
  return t.sum(t.mul(p_cw, t.sub(log_cw, log_sf)));
}

namespace {

Tensor fsm_sum(Tape& t, const std::vector<FsmPair>& pairs) {
  Tensor acc = t.scalar(0.0);
  for (const FsmPair& p : pairs) {
    acc = t.add(acc, fsm_loss(t, p.a, p.b, p.d_l, p.n_l));
  }
  return acc;
}

}  // namespace

Tensor objective_cw_sf(Tape& t, Tensor probs_cw, Tensor probs_sf,
                       std::span<const std::uint8_t> labels,
                       const std::vector<FsmPair>& fsm_pairs,
                       const LossWeights& weights) {
  auto loss = t.add(seg_ce(t, probs_cw, labels), seg_ce(t, probs_sf, labels));
  loss = t.add(loss, t.scale(fsm_sum(t, fsm_pairs), weights.lambda_fsm));
  return t.add(loss, t.scale(consistency_loss(t, probs_cw, probs_sf),
                             weights.lambda_con));
}

Tensor objective_d_rf(Tape& t, Tensor probs_d,
                      std::span<const std::uint8_t> labels_d,
                      const std::vector<FsmPair>& fsm_pairs,
                      const LossWeights& weights,
                      std::span<const std::uint8_t> rf_labels) {
  if (!rf_labels.empty()) {
    throw DomainError(
        "objective_d_rf: labels for the real-fog member are off-limits in "
        "training");
  }
  return t.add(seg_ce(t, probs_d, labels_d),
               t.scale(fsm_sum(t, fsm_pairs), weights.lambda_fsm));
}

}  // namespace foginv
