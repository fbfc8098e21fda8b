#include "foginv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "foginv/rng.hpp"

namespace foginv {

std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

namespace {

std::vector<std::int64_t> row_major_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size());
  std::int64_t acc = 1;
  for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
    st[static_cast<std::size_t>(d)] = acc;
    acc *= s[static_cast<std::size_t>(d)];
  }
  return st;
}

[[noreturn]] void bad_shape(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor handle

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
std::int64_t Tensor::size() const {
  return static_cast<std::int64_t>(tape_->node(id_).val.size());
}
std::span<const double> Tensor::values() const { return tape_->node(id_).val; }
std::span<const double> Tensor::grad() const { return tape_->node(id_).grad; }
bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }

double Tensor::item() const {
  if (size() != 1) bad_shape("item", "expected scalar, got " + shape_str(shape()));
  return tape_->node(id_).val[0];
}

// ---------------------------------------------------------------------------
// Tape plumbing

int Tape::push(Shape shape, bool requires_grad) {
  for (int e : shape) {
    if (e <= 0) bad_shape("tensor", "non-positive extent in " + shape_str(shape));
  }
  Node n;
  n.shape = std::move(shape);
  n.val.assign(static_cast<std::size_t>(numel(n.shape)), 0.0);
  n.requires_grad = requires_grad;
  if (requires_grad) n.grad.assign(n.val.size(), 0.0);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::push_with(Shape shape, std::vector<double> values, bool requires_grad) {
  for (int e : shape) {
    if (e <= 0) bad_shape("tensor", "non-positive extent in " + shape_str(shape));
  }
  if (numel(shape) != static_cast<std::int64_t>(values.size())) {
    bad_shape("tensor", "shape " + shape_str(shape) + " holds " +
                            std::to_string(numel(shape)) + " values, got " +
                            std::to_string(values.size()));
  }
  Node n;
  n.shape = std::move(shape);
  n.val = std::move(values);
  n.requires_grad = requires_grad;
  if (requires_grad) n.grad.assign(n.val.size(), 0.0);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::record(int out, std::function<void(Tape&)> back) {
  steps_.push_back({out, std::move(back)});
}

void Tape::check_same_shape(const char* op, Tensor a, Tensor b) const {
  if (node(a.id()).shape != node(b.id()).shape) {
    bad_shape(op, shape_str(node(a.id()).shape) + " vs " +
                      shape_str(node(b.id()).shape));
  }
}

void Tape::note_kink_gap(double gap) {
  if (gap < min_kink_gap_) min_kink_gap_ = gap;
}

void Tape::clear() {
  nodes_.clear();
  steps_.clear();
  min_kink_gap_ = 1e300;
}

void Tape::backward(Tensor root) {
  if (root.size() != 1) {
    bad_shape("backward", "root must be scalar, got " + shape_str(root.shape()));
  }
  if (!node(root.id()).requires_grad) return;
  node(root.id()).grad[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
    if (node(it->out).requires_grad) it->back(*this);
  }
}

// ---------------------------------------------------------------------------
// Leaves

Tensor Tape::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != static_cast<std::int64_t>(values.size())) {
    bad_shape("leaf", "shape " + shape_str(shape) + " holds " +
                          std::to_string(numel(shape)) + " values, got " +
                          std::to_string(values.size()));
  }
  return Tensor(this, push_with(std::move(shape), std::move(values), requires_grad));
}

Tensor Tape::leaf(Shape shape, std::span<const double> values,
                  bool requires_grad) {
  return leaf(std::move(shape),
              std::vector<double>(values.begin(), values.end()), requires_grad);
}

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  return leaf(std::move(shape), std::move(values), false);
}

Tensor Tape::scalar(double v) { return constant({1}, {v}); }

Tensor Tape::zeros(Shape shape, bool requires_grad) {
  const int id = push(std::move(shape), requires_grad);
  return Tensor(this, id);
}

// ---------------------------------------------------------------------------
// Element-wise ops

Tensor Tape::add(Tensor a, Tensor b) {
  check_same_shape("add", a, b);
  const bool rg = a.requires_grad() || b.requires_grad();
  const int out = push(node(a.id()).shape, rg);
  const auto& av = node(a.id()).val;
  const auto& bv = node(b.id()).val;
  auto& ov = node(out).val;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (rg) {
    record(out, [aid = a.id(), bid = b.id(), out](Tape& t) {
      const auto& g = t.node(out).grad;
      if (t.node(aid).requires_grad) {
        auto& ga = t.node(aid).grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (t.node(bid).requires_grad) {
        auto& gb = t.node(bid).grad;
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return Tensor(this, out);
}

Tensor Tape::sub(Tensor a, Tensor b) {
  check_same_shape("sub", a, b);
  const bool rg = a.requires_grad() || b.requires_grad();
  const int out = push(node(a.id()).shape, rg);
  const auto& av = node(a.id()).val;
  const auto& bv = node(b.id()).val;
  auto& ov = node(out).val;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  if (rg) {
    record(out, [aid = a.id(), bid = b.id(), out](Tape& t) {
      const auto& g = t.node(out).grad;
      if (t.node(aid).requires_grad) {
        auto& ga = t.node(aid).grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (t.node(bid).requires_grad) {
        auto& gb = t.node(bid).grad;
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return Tensor(this, out);
}

Tensor Tape::mul(Tensor a, Tensor b) {
  check_same_shape("mul", a, b);
  const bool rg = a.requires_grad() || b.requires_grad();
  const int out = push(node(a.id()).shape, rg);
  const auto& av = node(a.id()).val;
  const auto& bv = node(b.id()).val;
  auto& ov = node(out).val;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (rg) {
    record(out, [aid = a.id(), bid = b.id(), out](Tape& t) {
      const auto& g = t.node(out).grad;
      const auto& av2 = t.node(aid).val;
      const auto& bv2 = t.node(bid).val;
      if (t.node(aid).requires_grad) {
        auto& ga = t.node(aid).grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
      }
      if (t.node(bid).requires_grad) {
        auto& gb = t.node(bid).grad;
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
      }
    });
  }
  return Tensor(this, out);
}

Tensor Tape::div(Tensor a, Tensor b) {
  check_same_shape("div", a, b);
  const bool rg = a.requires_grad() || b.requires_grad();
  const int out = push(node(a.id()).shape, rg);
  const auto& av = node(a.id()).val;
  const auto& bv = node(b.id()).val;
  auto& ov = node(out).val;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
  if (rg) {
    record(out, [aid = a.id(), bid = b.id(), out](Tape& t) {
      const auto& g = t.node(out).grad;
      const auto& av2 = t.node(aid).val;
      const auto& bv2 = t.node(bid).val;
      if (t.node(aid).requires_grad) {
        auto& ga = t.node(aid).grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv2[i];
      }
      if (t.node(bid).requires_grad) {
        auto& gb = t.node(bid).grad;
        for (std::size_t i = 0; i < g.size(); ++i)
          gb[i] -= g[i] * av2[i] / (bv2[i] * bv2[i]);
      }
    });
  }
  return Tensor(this, out);
}

Tensor Tape::scale(Tensor a, double s) {
  const bool rg = a.requires_grad();
  const int out = push(node(a.id()).shape, rg);
  const auto& av = node(a.id()).val;
  auto& ov = node(out).val;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * s;
  if (rg) {
    record(out, [aid = a.id(), out, s](Tape& t) {
      const auto& g = t.node(out).grad;
      auto& ga = t.node(aid).grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
  }
  return Tensor(this, out);
}

Tensor Tape::add_scalar(Tensor a, double s) {
  const bool rg = a.requires_grad();
  const int out = push(node(a.id()).shape, rg);
  const auto& av = node(a.id()).val;
  auto& ov = node(out).val;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + s;
  if (rg) {
    record(out, [aid = a.id(), out](Tape& t) {
      const auto& g = t.node(out).grad;
      auto& ga = t.node(aid).grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return Tensor(this, out);
}

Tensor Tape::clamp_min(Tensor a, double floor) {
  const bool rg = a.requires_grad();
  const int out = push(node(a.id()).shape, rg);
  const auto& av = node(a.id()).val;
  auto& ov = node(out).val;
  for (std::size_t i = 0; i < ov.size(); ++i) {
    note_kink_gap(std::abs(av[i] - floor));
    ov[i] = av[i] > floor ? av[i] : floor;
  }
  if (rg) {
    record(out, [aid = a.id(), out, floor](Tape& t) {
      const auto& g = t.node(out).grad;
      const auto& av2 = t.node(aid).val;
      auto& ga = t.node(aid).grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (av2[i] > floor) ga[i] += g[i];
      }
    });
  }
  return Tensor(this, out);
}

Tensor Tape::leaky_relu(Tensor a, double negative_slope) {
  const bool rg = a.requires_grad();
  const int out = push(node(a.id()).shape, rg);
  const auto& av = node(a.id()).val;
  auto& ov = node(out).val;
  for (std::size_t i = 0; i < ov.size(); ++i) {
    note_kink_gap(std::abs(av[i]));
    ov[i] = av[i] > 0.0 ? av[i] : av[i] * negative_slope;
  }
  if (rg) {
    record(out, [aid = a.id(), out, negative_slope](Tape& t) {
      const auto& g = t.node(out).grad;
      const auto& av2 = t.node(aid).val;
      auto& ga = t.node(aid).grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * (av2[i] > 0.0 ? 1.0 : negative_slope);
      }
    });
  }
  return Tensor(this, out);
}

Tensor Tape::log(Tensor a) {
  const bool rg = a.requires_grad();
  const int out = push(node(a.id()).shape, rg);
  const auto& av = node(a.id()).val;
  auto& ov = node(out).val;
  for (std::size_t i = 0; i < ov.size(); ++i) {
    if (!(av[i] > 0.0)) {
      throw DomainError("log: non-positive input " + std::to_string(av[i]) +
                        " at flat index " + std::to_string(i));
    }
    ov[i] = std::log(av[i]);
  }
  if (rg) {
    record(out, [aid = a.id(), out](Tape& t) {
      const auto& g = t.node(out).grad;
      const auto& av2 = t.node(aid).val;
      auto& ga = t.node(aid).grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av2[i];
    });
  }
  return Tensor(this, out);
}

Tensor Tape::square(Tensor a) {
  const bool rg = a.requires_grad();
  const int out = push(node(a.id()).shape, rg);
  const auto& av = node(a.id()).val;
  auto& ov = node(out).val;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * av[i];
  if (rg) {
    record(out, [aid = a.id(), out](Tape& t) {
      const auto& g = t.node(out).grad;
      const auto& av2 = t.node(aid).val;
      auto& ga = t.node(aid).grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * g[i] * av2[i];
    });
  }
  return Tensor(this, out);
}

Tensor Tape::sqrt(Tensor a) {
  const bool rg = a.requires_grad();
  const int out = push(node(a.id()).shape, rg);
  const auto& av = node(a.id()).val;
  auto& ov = node(out).val;
  for (std::size_t i = 0; i < ov.size(); ++i) {
    if (av[i] < 0.0) {
      throw DomainError("sqrt: negative input " + std::to_string(av[i]));
    }
    ov[i] = std::sqrt(av[i]);
  }
  if (rg) {
    record(out, [aid = a.id(), out](Tape& t) {
      const auto& g = t.node(out).grad;
      const auto& ov2 = t.node(out).val;
      auto& ga = t.node(aid).grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * 0.5 / ov2[i];
      }
    });
  }
  return Tensor(this, out);
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor Tape::reshape(Tensor a, Shape shape) {
  if (numel(shape) != a.size()) {
    bad_shape("reshape", shape_str(a.shape()) + " -> " + shape_str(shape) +
                             " changes element count");
  }
  const bool rg = a.requires_grad();
  const int out = push(std::move(shape), rg);
  node(out).val = node(a.id()).val;
  if (rg) {
    record(out, [aid = a.id(), out](Tape& t) {
      const auto& g = t.node(out).grad;
      auto& ga = t.node(aid).grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return Tensor(this, out);
}

Tensor Tape::transpose(Tensor a, std::vector<int> perm) {
  const Shape& is = node(a.id()).shape;
  const int rank = static_cast<int>(is.size());
  if (static_cast<int>(perm.size()) != rank) {
    bad_shape("transpose", "perm size " + std::to_string(perm.size()) +
                               " vs rank " + std::to_string(rank));
  }
  Shape os(is.size());
  std::vector<bool> seen(is.size(), false);
  for (int d = 0; d < rank; ++d) {
    const int p = perm[static_cast<std::size_t>(d)];
    if (p < 0 || p >= rank || seen[static_cast<std::size_t>(p)]) {
      bad_shape("transpose", "invalid permutation");
    }
    seen[static_cast<std::size_t>(p)] = true;
    os[static_cast<std::size_t>(d)] = is[static_cast<std::size_t>(p)];
  }
  const bool rg = a.requires_grad();
  const int out = push(os, rg);
  const auto ist = row_major_strides(is);
  const auto ost = row_major_strides(os);
  // out[i0,...,ik] = in[perm applied]; walk output odometer, map to input.
  const auto& av = node(a.id()).val;
  auto& ov = node(out).val;
  std::vector<int> idx(is.size(), 0);
  const std::int64_t n = static_cast<std::int64_t>(ov.size());
  for (std::int64_t lin = 0; lin < n; ++lin) {
    std::int64_t src = 0;
    for (int d = 0; d < rank; ++d) {
      src += static_cast<std::int64_t>(idx[static_cast<std::size_t>(d)]) *
             ist[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
    }
    ov[static_cast<std::size_t>(lin)] = av[static_cast<std::size_t>(src)];
    for (int d = rank - 1; d >= 0; --d) {
      if (++idx[static_cast<std::size_t>(d)] < os[static_cast<std::size_t>(d)]) break;
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }
  if (rg) {
    record(out, [aid = a.id(), out, perm, ist, os, rank](Tape& t) {
      const auto& g = t.node(out).grad;
      auto& ga = t.node(aid).grad;
      std::vector<int> idx2(static_cast<std::size_t>(rank), 0);
      const std::int64_t n2 = static_cast<std::int64_t>(g.size());
      for (std::int64_t lin = 0; lin < n2; ++lin) {
        std::int64_t src = 0;
        for (int d = 0; d < rank; ++d) {
          src += static_cast<std::int64_t>(idx2[static_cast<std::size_t>(d)]) *
                 ist[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
        }
        ga[static_cast<std::size_t>(src)] += g[static_cast<std::size_t>(lin)];
        for (int d = rank - 1; d >= 0; --d) {
          if (++idx2[static_cast<std::size_t>(d)] < os[static_cast<std::size_t>(d)]) break;
          idx2[static_cast<std::size_t>(d)] = 0;
        }
      }
    });
  }
  return Tensor(this, out);
}

Tensor Tape::concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) bad_shape("concat", "no inputs");
  const Shape& s0 = node(parts[0].id()).shape;
  const int rank = static_cast<int>(s0.size());
  if (axis < 0 || axis >= rank) bad_shape("concat", "axis out of range");
  Shape os = s0;
  bool rg = false;
  for (const Tensor& p : parts) {
    const Shape& sp = node(p.id()).shape;
    if (static_cast<int>(sp.size()) != rank) {
      bad_shape("concat", "rank mismatch " + shape_str(s0) + " vs " + shape_str(sp));
    }
    for (int d = 0; d < rank; ++d) {
      if (d != axis && sp[static_cast<std::size_t>(d)] != s0[static_cast<std::size_t>(d)]) {
        bad_shape("concat", shape_str(s0) + " vs " + shape_str(sp));
      }
    }
    rg = rg || p.requires_grad();
  }
  os[static_cast<std::size_t>(axis)] = 0;
  for (const Tensor& p : parts) {
    os[static_cast<std::size_t>(axis)] +=
        node(p.id()).shape[static_cast<std::size_t>(axis)];
  }
  const int out = push(os, rg);

  std::int64_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[static_cast<std::size_t>(d)];
  std::int64_t inner = 1;
  for (int d = axis + 1; d < rank; ++d) inner *= s0[static_cast<std::size_t>(d)];

  auto& ov = node(out).val;
  std::vector<int> ids(parts.size());
  std::vector<std::int64_t> blocks(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) {
    ids[p] = parts[p].id();
    blocks[p] = node(ids[p]).shape[static_cast<std::size_t>(axis)] * inner;
  }
  const std::int64_t out_block = os[static_cast<std::size_t>(axis)] * inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    std::int64_t off = o * out_block;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const auto& pv = node(ids[p]).val;
      std::memcpy(ov.data() + off, pv.data() + o * blocks[p],
                  static_cast<std::size_t>(blocks[p]) * sizeof(double));
      off += blocks[p];
    }
  }
  if (rg) {
    record(out, [ids, blocks, outer, out_block, out](Tape& t) {
      const auto& g = t.node(out).grad;
      for (std::int64_t o = 0; o < outer; ++o) {
        std::int64_t off = o * out_block;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (t.node(ids[p]).requires_grad) {
            auto& gp = t.node(ids[p]).grad;
            for (std::int64_t i = 0; i < blocks[p]; ++i) {
              gp[static_cast<std::size_t>(o * blocks[p] + i)] +=
                  g[static_cast<std::size_t>(off + i)];
            }
          }
          off += blocks[p];
        }
      }
    });
  }
  return Tensor(this, out);
}

Tensor Tape::gather(Tensor a, std::vector<std::int64_t> indices) {
  if (indices.empty()) bad_shape("gather", "no indices");
  const std::int64_t n = a.size();
  for (std::int64_t i : indices) {
    if (i < 0 || i >= n) {
      bad_shape("gather", "index " + std::to_string(i) + " out of range for " +
                              std::to_string(n) + " elements");
    }
  }
  const bool rg = a.requires_grad();
  const int out = push({static_cast<int>(indices.size())}, rg);
  const auto& av = node(a.id()).val;
  auto& ov = node(out).val;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    ov[i] = av[static_cast<std::size_t>(indices[i])];
  }
  if (rg) {
    record(out, [aid = a.id(), out, idx = std::move(indices)](Tape& t) {
      const auto& g = t.node(out).grad;
      auto& ga = t.node(aid).grad;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        ga[static_cast<std::size_t>(idx[i])] += g[i];
      }
    });
  }
  return Tensor(this, out);
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor Tape::matmul(Tensor a, Tensor b) {
  const Shape& as = node(a.id()).shape;
  const Shape& bs = node(b.id()).shape;
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    bad_shape("matmul", shape_str(as) + " x " + shape_str(bs));
  }
  const int m = as[0], k = as[1], n = bs[1];
  const bool rg = a.requires_grad() || b.requires_grad();
  const int out = push({m, n}, rg);
  const double* A = node(a.id()).val.data();
  const double* B = node(b.id()).val.data();
  double* C = node(out).val.data();
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const double aik = A[i * k + kk];
      const double* brow = B + kk * n;
      double* crow = C + i * n;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  if (rg) {
    record(out, [aid = a.id(), bid = b.id(), out, m, k, n](Tape& t) {
      const auto& g = t.node(out).grad;
      const auto& av = t.node(aid).val;
      const auto& bv = t.node(bid).val;
      if (t.node(aid).requires_grad) {
        auto& ga = t.node(aid).grad;  // dA += G * B^T
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) {
            const double gij = g[static_cast<std::size_t>(i * n + j)];
            for (int kk = 0; kk < k; ++kk) {
              ga[static_cast<std::size_t>(i * k + kk)] +=
                  gij * bv[static_cast<std::size_t>(kk * n + j)];
            }
          }
        }
      }
      if (t.node(bid).requires_grad) {
        auto& gb = t.node(bid).grad;  // dB += A^T * G
        for (int kk = 0; kk < k; ++kk) {
          for (int i = 0; i < m; ++i) {
            const double aik = av[static_cast<std::size_t>(i * k + kk)];
            for (int j = 0; j < n; ++j) {
              gb[static_cast<std::size_t>(kk * n + j)] +=
                  aik * g[static_cast<std::size_t>(i * n + j)];
            }
          }
        }
      }
    });
  }
  return Tensor(this, out);
}

Tensor Tape::dot(Tensor a, Tensor b) {
  check_same_shape("dot", a, b);
  const bool rg = a.requires_grad() || b.requires_grad();
  const int out = push({1}, rg);
  const auto& av = node(a.id()).val;
  const auto& bv = node(b.id()).val;
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  node(out).val[0] = acc;
  if (rg) {
    record(out, [aid = a.id(), bid = b.id(), out](Tape& t) {
      const double g = t.node(out).grad[0];
      const auto& av2 = t.node(aid).val;
      const auto& bv2 = t.node(bid).val;
      if (t.node(aid).requires_grad) {
        auto& ga = t.node(aid).grad;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * bv2[i];
      }
      if (t.node(bid).requires_grad) {
        auto& gb = t.node(bid).grad;
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * av2[i];
      }
    });
  }
  return Tensor(this, out);
}

Tensor Tape::l2_norm(Tensor a) {
  const bool rg = a.requires_grad();
  const int out = push({1}, rg);
  const auto& av = node(a.id()).val;
  double acc = 0.0;
  for (double v : av) acc += v * v;
  node(out).val[0] = std::sqrt(acc);
  if (rg) {
    record(out, [aid = a.id(), out](Tape& t) {
      const double g = t.node(out).grad[0];
      const double nrm = t.node(out).val[0];
      const auto& av2 = t.node(aid).val;
      auto& ga = t.node(aid).grad;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * av2[i] / nrm;
    });
  }
  return Tensor(this, out);
}

// ---------------------------------------------------------------------------
// Reductions

Tensor Tape::sum(Tensor a) {
  const bool rg = a.requires_grad();
  const int out = push({1}, rg);
  const auto& av = node(a.id()).val;
  double acc = 0.0;
  for (double v : av) acc += v;
  node(out).val[0] = acc;
  if (rg) {
    record(out, [aid = a.id(), out](Tape& t) {
      const double g = t.node(out).grad[0];
      auto& ga = t.node(aid).grad;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return Tensor(this, out);
}

Tensor Tape::mean(Tensor a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor Tape::sum_axis(Tensor a, int axis) {
  const Shape& is = node(a.id()).shape;
  const int rank = static_cast<int>(is.size());
  if (axis < 0 || axis >= rank) bad_shape("sum_axis", "axis out of range");
  Shape os;
  for (int d = 0; d < rank; ++d) {
    if (d != axis) os.push_back(is[static_cast<std::size_t>(d)]);
  }
  if (os.empty()) os = {1};
  const bool rg = a.requires_grad();
  const int out = push(os, rg);
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= is[static_cast<std::size_t>(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= is[static_cast<std::size_t>(d)];
  const std::int64_t ext = is[static_cast<std::size_t>(axis)];
  const auto& av = node(a.id()).val;
  auto& ov = node(out).val;
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t e = 0; e < ext; ++e) {
      const double* src = av.data() + (o * ext + e) * inner;
      double* dst = ov.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  if (rg) {
    record(out, [aid = a.id(), out, outer, inner, ext](Tape& t) {
      const auto& g = t.node(out).grad;
      auto& ga = t.node(aid).grad;
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t e = 0; e < ext; ++e) {
          double* dst = ga.data() + (o * ext + e) * inner;
          const double* src = g.data() + o * inner;
          for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return Tensor(this, out);
}

Tensor Tape::mean_axis(Tensor a, int axis) {
  const double ext =
      static_cast<double>(node(a.id()).shape[static_cast<std::size_t>(axis)]);
  return scale(sum_axis(a, axis), 1.0 / ext);
}

// ---------------------------------------------------------------------------
// NN primitives

namespace {

// Single-pass micro-kernels for the dominant 3x3 / stride 1 / pad 1 case
// (output size equals input size). One sweep per (out-channel, in-channel)
// instead of nine read-modify-write sweeps; interior columns run branch-free.

void conv3x3_forward_plane(const double* __restrict xp, const double* __restrict wk,
                           double* __restrict op, int h, int w) {
  const double w00 = wk[0], w01 = wk[1], w02 = wk[2];
  const double w10 = wk[3], w11 = wk[4], w12 = wk[5];
  const double w20 = wk[6], w21 = wk[7], w22 = wk[8];
  for (int y = 0; y < h; ++y) {
    const double* r0 = y > 0 ? xp + static_cast<std::int64_t>(y - 1) * w : nullptr;
    const double* r1 = xp + static_cast<std::int64_t>(y) * w;
    const double* r2 = y + 1 < h ? xp + static_cast<std::int64_t>(y + 1) * w : nullptr;
    double* orow = op + static_cast<std::int64_t>(y) * w;

    const auto col = [&](int x0) {  // boundary columns, any row pattern
      double acc = 0.0;
      if (x0 > 0) {
        if (r0) acc += w00 * r0[x0 - 1];
        acc += w10 * r1[x0 - 1];
        if (r2) acc += w20 * r2[x0 - 1];
      }
      if (r0) acc += w01 * r0[x0];
      acc += w11 * r1[x0];
      if (r2) acc += w21 * r2[x0];
      if (x0 + 1 < w) {
        if (r0) acc += w02 * r0[x0 + 1];
        acc += w12 * r1[x0 + 1];
        if (r2) acc += w22 * r2[x0 + 1];
      }
      orow[x0] += acc;
    };
    col(0);
    if (r0 && r2) {
      for (int x = 1; x < w - 1; ++x) {
        orow[x] += w00 * r0[x - 1] + w01 * r0[x] + w02 * r0[x + 1] +
                   w10 * r1[x - 1] + w11 * r1[x] + w12 * r1[x + 1] +
                   w20 * r2[x - 1] + w21 * r2[x] + w22 * r2[x + 1];
      }
    } else if (r0) {
      for (int x = 1; x < w - 1; ++x) {
        orow[x] += w00 * r0[x - 1] + w01 * r0[x] + w02 * r0[x + 1] +
                   w10 * r1[x - 1] + w11 * r1[x] + w12 * r1[x + 1];
      }
    } else if (r2) {
      for (int x = 1; x < w - 1; ++x) {
        orow[x] += w10 * r1[x - 1] + w11 * r1[x] + w12 * r1[x + 1] +
                   w20 * r2[x - 1] + w21 * r2[x] + w22 * r2[x + 1];
      }
    } else {
      for (int x = 1; x < w - 1; ++x) {
        orow[x] += w10 * r1[x - 1] + w11 * r1[x] + w12 * r1[x + 1];
      }
    }
    if (w > 1) col(w - 1);
  }
}

// d(loss)/d(weights) for one (out-channel, in-channel) plane: nine
// independent accumulator chains, one sweep over the gradient plane.
void conv3x3_backward_w_plane(const double* __restrict xp, const double* __restrict gp,
                              double* __restrict gw, int h, int w) {
  double a00 = 0, a01 = 0, a02 = 0, a10 = 0, a11 = 0, a12 = 0, a20 = 0,
         a21 = 0, a22 = 0;
  for (int y = 0; y < h; ++y) {
    const double* r0 = y > 0 ? xp + static_cast<std::int64_t>(y - 1) * w : nullptr;
    const double* r1 = xp + static_cast<std::int64_t>(y) * w;
    const double* r2 = y + 1 < h ? xp + static_cast<std::int64_t>(y + 1) * w : nullptr;
    const double* grow = gp + static_cast<std::int64_t>(y) * w;

    const auto col = [&](int x0) {
      const double g = grow[x0];
      if (x0 > 0) {
        if (r0) a00 += g * r0[x0 - 1];
        a10 += g * r1[x0 - 1];
        if (r2) a20 += g * r2[x0 - 1];
      }
      if (r0) a01 += g * r0[x0];
      a11 += g * r1[x0];
      if (r2) a21 += g * r2[x0];
      if (x0 + 1 < w) {
        if (r0) a02 += g * r0[x0 + 1];
        a12 += g * r1[x0 + 1];
        if (r2) a22 += g * r2[x0 + 1];
      }
    };
    col(0);
    if (r0 && r2) {
      for (int x = 1; x < w - 1; ++x) {
        const double g = grow[x];
        a00 += g * r0[x - 1]; a01 += g * r0[x]; a02 += g * r0[x + 1];
        a10 += g * r1[x - 1]; a11 += g * r1[x]; a12 += g * r1[x + 1];
        a20 += g * r2[x - 1]; a21 += g * r2[x]; a22 += g * r2[x + 1];
      }
    } else if (r0) {
      for (int x = 1; x < w - 1; ++x) {
        const double g = grow[x];
        a00 += g * r0[x - 1]; a01 += g * r0[x]; a02 += g * r0[x + 1];
        a10 += g * r1[x - 1]; a11 += g * r1[x]; a12 += g * r1[x + 1];
      }
    } else if (r2) {
      for (int x = 1; x < w - 1; ++x) {
        const double g = grow[x];
        a10 += g * r1[x - 1]; a11 += g * r1[x]; a12 += g * r1[x + 1];
        a20 += g * r2[x - 1]; a21 += g * r2[x]; a22 += g * r2[x + 1];
      }
    } else {
      for (int x = 1; x < w - 1; ++x) {
        const double g = grow[x];
        a10 += g * r1[x - 1]; a11 += g * r1[x]; a12 += g * r1[x + 1];
      }
    }
    if (w > 1) col(w - 1);
  }
  gw[0] += a00; gw[1] += a01; gw[2] += a02;
  gw[3] += a10; gw[4] += a11; gw[5] += a12;
  gw[6] += a20; gw[7] += a21; gw[8] += a22;
}

// d(loss)/d(input) for one (out-channel, in-channel) plane, written in
// gather form: each input row reads three gradient rows with the kernel
// flipped, so the inner loop has no scatter.
void conv3x3_backward_x_plane(const double* __restrict gp, const double* __restrict wk,
                              double* __restrict gxp, int h, int w) {
  const double w00 = wk[0], w01 = wk[1], w02 = wk[2];
  const double w10 = wk[3], w11 = wk[4], w12 = wk[5];
  const double w20 = wk[6], w21 = wk[7], w22 = wk[8];
  for (int y = 0; y < h; ++y) {
    // kernel row 0 pairs with gradient row y+1, row 2 with y-1
    const double* g0 = y + 1 < h ? gp + static_cast<std::int64_t>(y + 1) * w : nullptr;
    const double* g1 = gp + static_cast<std::int64_t>(y) * w;
    const double* g2 = y > 0 ? gp + static_cast<std::int64_t>(y - 1) * w : nullptr;
    double* gxrow = gxp + static_cast<std::int64_t>(y) * w;

    const auto col = [&](int x0) {
      double acc = 0.0;
      if (x0 + 1 < w) {  // kx = 0 reads gradient column x0 + 1
        if (g0) acc += w00 * g0[x0 + 1];
        acc += w10 * g1[x0 + 1];
        if (g2) acc += w20 * g2[x0 + 1];
      }
      if (g0) acc += w01 * g0[x0];
      acc += w11 * g1[x0];
      if (g2) acc += w21 * g2[x0];
      if (x0 > 0) {  // kx = 2 reads gradient column x0 - 1
        if (g0) acc += w02 * g0[x0 - 1];
        acc += w12 * g1[x0 - 1];
        if (g2) acc += w22 * g2[x0 - 1];
      }
      gxrow[x0] += acc;
    };
    col(0);
    if (g0 && g2) {
      for (int x = 1; x < w - 1; ++x) {
        gxrow[x] += w00 * g0[x + 1] + w01 * g0[x] + w02 * g0[x - 1] +
                    w10 * g1[x + 1] + w11 * g1[x] + w12 * g1[x - 1] +
                    w20 * g2[x + 1] + w21 * g2[x] + w22 * g2[x - 1];
      }
    } else if (g0) {
      for (int x = 1; x < w - 1; ++x) {
        gxrow[x] += w00 * g0[x + 1] + w01 * g0[x] + w02 * g0[x - 1] +
                    w10 * g1[x + 1] + w11 * g1[x] + w12 * g1[x - 1];
      }
    } else if (g2) {
      for (int x = 1; x < w - 1; ++x) {
        gxrow[x] += w10 * g1[x + 1] + w11 * g1[x] + w12 * g1[x - 1] +
                    w20 * g2[x + 1] + w21 * g2[x] + w22 * g2[x - 1];
      }
    } else {
      for (int x = 1; x < w - 1; ++x) {
        gxrow[x] += w10 * g1[x + 1] + w11 * g1[x] + w12 * g1[x - 1];
      }
    }
    if (w > 1) col(w - 1);
  }
}

}  // namespace

Tensor Tape::conv2d(Tensor x, Tensor w, Tensor bias, int stride, int pad) {
  const Shape& xs = node(x.id()).shape;
  const Shape& ws = node(w.id()).shape;
  const Shape& bs = node(bias.id()).shape;
  if (xs.size() != 3 || ws.size() != 4 || bs.size() != 1) {
    bad_shape("conv2d", "x " + shape_str(xs) + ", w " + shape_str(ws) +
                            ", bias " + shape_str(bs));
  }
  if (ws[1] != xs[0] || bs[0] != ws[0]) {
    bad_shape("conv2d", "channel mismatch: x " + shape_str(xs) + ", w " +
                            shape_str(ws) + ", bias " + shape_str(bs));
  }
  if (stride < 1) bad_shape("conv2d", "stride must be >= 1");
  const int ic = xs[0], h = xs[1], wd = xs[2];
  const int oc = ws[0], kh = ws[2], kw = ws[3];
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) {
    bad_shape("conv2d", "kernel " + shape_str(ws) + " too large for input " +
                            shape_str(xs));
  }
  const bool rg = x.requires_grad() || w.requires_grad() || bias.requires_grad();
  const double* X = node(x.id()).val.data();
  const double* W = node(w.id()).val.data();
  const double* B = node(bias.id()).val.data();
  std::vector<double> ov;
  ov.reserve(static_cast<std::size_t>(oc) * oh * ow);
  for (int o = 0; o < oc; ++o) {
    ov.insert(ov.end(), static_cast<std::size_t>(oh) * ow, B[o]);
  }
  double* O = ov.data();

  const bool fast3x3 = stride == 1 && pad == 1 && kh == 3 && kw == 3;

  for (int o = 0; o < oc; ++o) {
    double* oplane = O + static_cast<std::int64_t>(o) * oh * ow;
    for (int c = 0; c < ic; ++c) {
      const double* xplane = X + static_cast<std::int64_t>(c) * h * wd;
      const double* wk = W + ((static_cast<std::int64_t>(o) * ic + c) * kh) * kw;
      if (fast3x3) {
        conv3x3_forward_plane(xplane, wk, oplane, h, wd);
        continue;
      }
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const double wv = wk[ky * kw + kx];
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const double* xrow = xplane + static_cast<std::int64_t>(iy) * wd;
            double* orow = oplane + static_cast<std::int64_t>(oy) * ow;
            // valid ox range so that ix = ox*stride + kx - pad is in bounds
            int ox0 = 0;
            while (ox0 * stride + kx - pad < 0) ++ox0;
            int ox1 = ow;
            while (ox1 > ox0 && (ox1 - 1) * stride + kx - pad >= wd) --ox1;
            if (stride == 1) {
              const double* xr = xrow + kx - pad;
              for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * xr[ox];
            } else {
              for (int ox = ox0; ox < ox1; ++ox) {
                orow[ox] += wv * xrow[ox * stride + kx - pad];
              }
            }
          }
        }
      }
    }
  }
  const int out = push_with({oc, oh, ow}, std::move(ov), rg);
  if (rg) {
    record(out, [xid = x.id(), wid = w.id(), bid = bias.id(), out, ic, h, wd,
                 oc, kh, kw, oh, ow, stride, pad](Tape& t) {
      const double* G = t.node(out).grad.data();
      const bool need_x = t.node(xid).requires_grad;
      const bool need_w = t.node(wid).requires_grad;
      const bool need_b = t.node(bid).requires_grad;
      if (need_b) {
        auto& gb = t.node(bid).grad;
        for (int o = 0; o < oc; ++o) {
          const double* gplane = G + static_cast<std::int64_t>(o) * oh * ow;
          double acc = 0.0;
          for (int i = 0; i < oh * ow; ++i) acc += gplane[i];
          gb[static_cast<std::size_t>(o)] += acc;
        }
      }
      if (!need_x && !need_w) return;
      const double* X = t.node(xid).val.data();
      const double* W = t.node(wid).val.data();
      double* GX = need_x ? t.node(xid).grad.data() : nullptr;
      double* GW = need_w ? t.node(wid).grad.data() : nullptr;
      const bool fast3x3 = stride == 1 && pad == 1 && kh == 3 && kw == 3;
      for (int o = 0; o < oc; ++o) {
        const double* gplane = G + static_cast<std::int64_t>(o) * oh * ow;
        for (int c = 0; c < ic; ++c) {
          const double* xplane = X + static_cast<std::int64_t>(c) * h * wd;
          double* gxplane = need_x ? GX + static_cast<std::int64_t>(c) * h * wd : nullptr;
          const std::int64_t wbase = ((static_cast<std::int64_t>(o) * ic + c) * kh) * kw;
          if (fast3x3) {
            if (need_w) conv3x3_backward_w_plane(xplane, gplane, GW + wbase, h, wd);
            if (need_x) conv3x3_backward_x_plane(gplane, W + wbase, gxplane, h, wd);
            continue;
          }
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              const double wv = W[wbase + ky * kw + kx];
              double wacc = 0.0;
              for (int oy = 0; oy < oh; ++oy) {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                const double* xrow = xplane + static_cast<std::int64_t>(iy) * wd;
                const double* grow = gplane + static_cast<std::int64_t>(oy) * ow;
                double* gxrow = need_x ? gxplane + static_cast<std::int64_t>(iy) * wd : nullptr;
                int ox0 = 0;
                while (ox0 * stride + kx - pad < 0) ++ox0;
                int ox1 = ow;
                while (ox1 > ox0 && (ox1 - 1) * stride + kx - pad >= wd) --ox1;
                if (need_w) {
                  if (stride == 1) {
                    const double* xr = xrow + kx - pad;
                    for (int ox = ox0; ox < ox1; ++ox) wacc += grow[ox] * xr[ox];
                  } else {
                    for (int ox = ox0; ox < ox1; ++ox) {
                      wacc += grow[ox] * xrow[ox * stride + kx - pad];
                    }
                  }
                }
                if (need_x) {
                  if (stride == 1) {
                    double* gxr = gxrow + kx - pad;
                    for (int ox = ox0; ox < ox1; ++ox) gxr[ox] += wv * grow[ox];
                  } else {
                    for (int ox = ox0; ox < ox1; ++ox) {
                      gxrow[ox * stride + kx - pad] += wv * grow[ox];
                    }
                  }
                }
              }
              if (need_w) GW[wbase + ky * kw + kx] += wacc;
            }
          }
        }
      }
    });
  }
  return Tensor(this, out);
}

Tensor Tape::upsample2x(Tensor x) {
  const Shape& xs = node(x.id()).shape;
  if (xs.size() != 3) bad_shape("upsample2x", "expected [C,H,W], got " + shape_str(xs));
  const int c = xs[0], h = xs[1], w = xs[2];
  const bool rg = x.requires_grad();
  const int out = push({c, 2 * h, 2 * w}, rg);
  const auto& av = node(x.id()).val;
  auto& ov = node(out).val;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        const double v = av[static_cast<std::size_t>((ch * h + y) * w + xx)];
        const std::int64_t base = (static_cast<std::int64_t>(ch) * 2 * h + 2 * y) * 2 * w + 2 * xx;
        ov[static_cast<std::size_t>(base)] = v;
        ov[static_cast<std::size_t>(base + 1)] = v;
        ov[static_cast<std::size_t>(base + 2 * w)] = v;
        ov[static_cast<std::size_t>(base + 2 * w + 1)] = v;
      }
    }
  }
  if (rg) {
    record(out, [xid = x.id(), out, c, h, w](Tape& t) {
      const auto& g = t.node(out).grad;
      auto& gx = t.node(xid).grad;
      for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
          for (int xx = 0; xx < w; ++xx) {
            const std::int64_t base = (static_cast<std::int64_t>(ch) * 2 * h + 2 * y) * 2 * w + 2 * xx;
            gx[static_cast<std::size_t>((ch * h + y) * w + xx)] +=
                g[static_cast<std::size_t>(base)] + g[static_cast<std::size_t>(base + 1)] +
                g[static_cast<std::size_t>(base + 2 * w)] +
                g[static_cast<std::size_t>(base + 2 * w + 1)];
          }
        }
      }
    });
  }
  return Tensor(this, out);
}

Tensor Tape::softmax(Tensor a, int axis) {
  const Shape& is = node(a.id()).shape;
  const int rank = static_cast<int>(is.size());
  if (axis < 0 || axis >= rank) bad_shape("softmax", "axis out of range");
  const bool rg = a.requires_grad();
  const int out = push(is, rg);
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= is[static_cast<std::size_t>(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= is[static_cast<std::size_t>(d)];
  const std::int64_t ext = is[static_cast<std::size_t>(axis)];
  const auto& av = node(a.id()).val;
  auto& ov = node(out).val;
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * ext * inner + i;
      double mx = av[static_cast<std::size_t>(base)];
      for (std::int64_t e = 1; e < ext; ++e) {
        mx = std::max(mx, av[static_cast<std::size_t>(base + e * inner)]);
      }
      double z = 0.0;
      for (std::int64_t e = 0; e < ext; ++e) {
        const double v = std::exp(av[static_cast<std::size_t>(base + e * inner)] - mx);
        ov[static_cast<std::size_t>(base + e * inner)] = v;
        z += v;
      }
      for (std::int64_t e = 0; e < ext; ++e) {
        ov[static_cast<std::size_t>(base + e * inner)] /= z;
      }
    }
  }
  if (rg) {
    record(out, [aid = a.id(), out, outer, inner, ext](Tape& t) {
      const auto& g = t.node(out).grad;
      const auto& p = t.node(out).val;
      auto& ga = t.node(aid).grad;
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * ext * inner + i;
          double dotgp = 0.0;
          for (std::int64_t e = 0; e < ext; ++e) {
            const std::size_t k = static_cast<std::size_t>(base + e * inner);
            dotgp += g[k] * p[k];
          }
          for (std::int64_t e = 0; e < ext; ++e) {
            const std::size_t k = static_cast<std::size_t>(base + e * inner);
            ga[k] += p[k] * (g[k] - dotgp);
          }
        }
      }
    });
  }
  return Tensor(this, out);
}

Tensor Tape::detach(Tensor a) {
  const int out = push(node(a.id()).shape, false);
  node(out).val = node(a.id()).val;
  return Tensor(this, out);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle

double grad_check(
    const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& loss_fn,
    const std::vector<GradCheckParam>& params, double epsilon,
    std::uint64_t seed) {
  if (epsilon < 1e-7 || epsilon > 1e-4) {
    throw DomainError("grad_check: epsilon " + std::to_string(epsilon) +
                      " outside [1e-7, 1e-4]");
  }
  auto eval = [&](const std::vector<GradCheckParam>& ps, bool with_grad,
                  std::vector<std::vector<double>>* grads_out) {
    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(ps.size());
    for (const auto& p : ps) leaves.push_back(tape.leaf(p.shape, p.values, with_grad));
    Tensor loss = loss_fn(tape, leaves);
    const double v = loss.item();
    if (with_grad) {
      if (tape.min_kink_gap() < 10.0 * epsilon) {
        throw ShapeError("grad_check: evaluation point within 10*epsilon of an "
                         "activation kink (gap " +
                         std::to_string(tape.min_kink_gap()) + ")");
      }
      tape.backward(loss);
      grads_out->clear();
      for (const Tensor& l : leaves) {
        grads_out->emplace_back(l.grad().begin(), l.grad().end());
      }
    }
    return v;
  };

  std::vector<std::vector<double>> analytic;
  const double base = eval(params, true, &analytic);
  if (!std::isfinite(base)) {
    throw DomainError("grad_check: non-finite loss at the base point");
  }

  Rng rng(seed);
  std::vector<GradCheckParam> work = params;
  double max_rel = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const std::size_t n = params[p].values.size();
    std::vector<std::size_t> coords;
    if (n <= 50) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      auto picked = rng.sample_without_replacement(static_cast<int>(n), 50);
      coords.assign(picked.begin(), picked.end());
    }
    for (std::size_t c : coords) {
      const double orig = work[p].values[c];
      work[p].values[c] = orig + epsilon;
      const double fp = eval(work, false, nullptr);
      work[p].values[c] = orig - epsilon;
      const double fm = eval(work, false, nullptr);
      work[p].values[c] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw DomainError("grad_check: non-finite loss probing parameter " +
                          std::to_string(p) + " coordinate " + std::to_string(c));
      }
      const double numeric = (fp - fm) / (2.0 * epsilon);
      const double an = analytic[p][c];
      const double rel = std::abs(an - numeric) /
                         std::max({std::abs(an), std::abs(numeric), 1e-12});
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace foginv
