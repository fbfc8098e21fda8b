#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "foginv/errors.hpp"

namespace foginv {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

// Handle to a node on a Tape. Cheap to copy; invalidated by Tape::clear().
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  std::int64_t size() const;
  std::span<const double> values() const;
  std::span<const double> grad() const;  // empty span if no grad
  bool requires_grad() const;
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  double item() const;  // value of a scalar tensor

 private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Records forward operations and replays their backward rules in reverse
// order. Node ids are assigned in recording order, so reverse id order is a
// reverse topological order of the graph. Single-threaded by contract; a
// training run owns its tape exclusively.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // -- leaves ---------------------------------------------------------------
  Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad);
  Tensor leaf(Shape shape, std::span<const double> values, bool requires_grad);
  Tensor constant(Shape shape, std::vector<double> values);
  Tensor scalar(double v);
  Tensor zeros(Shape shape, bool requires_grad = false);

  // -- element-wise ---------------------------------------------------------
  Tensor add(Tensor a, Tensor b);
  Tensor sub(Tensor a, Tensor b);
  Tensor mul(Tensor a, Tensor b);
  Tensor div(Tensor a, Tensor b);
  Tensor scale(Tensor a, double s);
  Tensor add_scalar(Tensor a, double s);
  Tensor clamp_min(Tensor a, double floor);
  Tensor leaky_relu(Tensor a, double negative_slope);
  Tensor log(Tensor a);
  Tensor square(Tensor a);
  Tensor sqrt(Tensor a);

  // -- shape ----------------------------------------------------------------
  Tensor reshape(Tensor a, Shape shape);
  Tensor transpose(Tensor a, std::vector<int> perm);
  Tensor concat(const std::vector<Tensor>& parts, int axis);
  // 1-D selection of flat indices; backward scatter-adds. Indices may repeat.
  Tensor gather(Tensor a, std::vector<std::int64_t> indices);

  // -- linear algebra -------------------------------------------------------
  Tensor matmul(Tensor a, Tensor b);  // [m,k] x [k,n] -> [m,n]
  Tensor dot(Tensor a, Tensor b);     // same shape -> scalar
  Tensor l2_norm(Tensor a);           // -> scalar

  // -- reductions -----------------------------------------------------------
  Tensor sum(Tensor a);
  Tensor mean(Tensor a);
  Tensor sum_axis(Tensor a, int axis);
  Tensor mean_axis(Tensor a, int axis);

  // -- nn primitives --------------------------------------------------------
  // x [C,H,W], w [OC,IC,KH,KW], bias [OC]; zero padding.
  Tensor conv2d(Tensor x, Tensor w, Tensor bias, int stride, int pad);
  Tensor upsample2x(Tensor x);  // nearest neighbor, [C,H,W] -> [C,2H,2W]
  Tensor softmax(Tensor a, int axis);

  // -- gradient flow --------------------------------------------------------
  Tensor detach(Tensor a);  // value copy, stops gradients

  // Seeds d(root)/d(root) = 1 and sweeps the recorded ops once in reverse
  // order, accumulating into the grad buffer of every grad-requiring node.
  void backward(Tensor root);

  void clear();  // invalidates all tensors and grads from this tape
  std::size_t num_nodes() const { return nodes_.size(); }

  // Smallest |pre-activation| seen by any kinked op (leaky_relu, clamp_min)
  // since the last clear(). Used by grad_check to reject evaluation points
  // too close to a non-smooth point.
  double min_kink_gap() const { return min_kink_gap_; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;  // allocated iff requires_grad
    bool requires_grad = false;
  };
  struct Step {
    int out;
    std::function<void(Tape&)> back;
  };

  int push(Shape shape, bool requires_grad);
  // Like push, but adopts an already-computed value buffer instead of
  // zero-filling one (the values must match the shape's element count).
  int push_with(Shape shape, std::vector<double> values, bool requires_grad);
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  void record(int out, std::function<void(Tape&)> back);
  void check_same_shape(const char* op, Tensor a, Tensor b) const;
  void note_kink_gap(double gap);

  std::deque<Node> nodes_;
  std::vector<Step> steps_;
  double min_kink_gap_ = 1e300;

  friend class Tensor;
};

// Max over sampled coordinates of
//   |analytic - central difference| / max(|analytic|, |numeric|, 1e-12).
// Samples min(50, size) coordinates per parameter tensor. `loss_fn` gets a
// fresh tape plus one leaf per parameter (in order) and must return a scalar.
// Throws DomainError if the loss is non-finite at a probe point, naming the
// coordinate, and ShapeError if the recorded graph passes within 10*epsilon
// of an activation kink (callers re-sample the evaluation point).
struct GradCheckParam {
  Shape shape;
  std::vector<double> values;
};

double grad_check(
    const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& loss_fn,
    const std::vector<GradCheckParam>& params, double epsilon,
    std::uint64_t seed);

}  // namespace foginv
