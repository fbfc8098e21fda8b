#include "foginv/gradbattery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "foginv/errors.hpp"
#include "foginv/fogpass.hpp"
#include "foginv/losses.hpp"
#include "foginv/rng.hpp"
#include "foginv/segnet.hpp"
#include "foginv/tensor.hpp"

namespace foginv {

namespace {

constexpr double kEpsilon = 1e-5;

// An evaluation point is discarded and redrawn when the recorded graph passes
// within 10*epsilon of an activation kink. Full-network graphs hold thousands
// of pre-activations, so the occasional graze is expected; a case that still
// grazes after this many fresh points is a bug, not bad luck.
constexpr int kMaxAttempts = 40;

// Weights for the through-network objective cases, chosen so the style term
// is not drowned by the cross-entropy at these shapes (the style loss carries
// a 1/(4 d^2 n^2) normalizer). Gradient correctness does not depend on them.
constexpr LossWeights kNetWeights{1e4, 1.0, 0.1};

// Per-scale shape knobs. Both scales run the identical case list; micro keeps
// a full sweep well under a minute, small stresses the same code on larger
// operands and images.
struct Dims {
  int vec;
  Shape box;    // generic 3-D operand
  int m, k, n;  // matmul extents
  int img;      // image side for network cases (multiple of 4)
  int classes;
  int width;
  int factor_dim;
};

Dims dims_for(CheckScale s) {
  if (s == CheckScale::Micro) return {7, {2, 3, 4}, 3, 4, 5, 8, 4, 8, 4};
  return {23, {3, 5, 6}, 5, 7, 6, 16, 6, 8, 8};
}

std::vector<double> draw(Rng& rng, std::int64_t n, double lo, double hi) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Magnitudes in [margin, margin+span] with random sign: keeps denominators,
// norms, and kinked activations away from their trouble points.
std::vector<double> draw_offset(Rng& rng, std::int64_t n, double margin,
                                double span) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) {
    const double mag = rng.uniform(margin, margin + span);
    x = rng.uniform() < 0.5 ? -mag : mag;
  }
  return v;
}

// Scalarizes an op output against a fixed random probe direction so index
// mixups in a backward rule cannot cancel the way they would in a plain sum.
Tensor probe_sum(Tape& t, Tensor y, std::uint64_t probe_seed) {
  Rng rng(probe_seed);
  auto r = draw(rng, y.size(), -1.5, 1.5);
  return t.sum(t.mul(y, t.constant(y.shape(), std::move(r))));
}

using LossFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

struct BuiltCase {
  LossFn fn;
  std::vector<GradCheckParam> params;
};

double host_cosine_distance(const std::vector<double>& a,
                            const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

bool clear_of_hinge(const std::vector<std::vector<double>>& factors,
                    double margin) {
  for (std::size_t i = 0; i < factors.size(); ++i) {
    for (std::size_t j = i + 1; j < factors.size(); ++j) {
      if (std::abs(host_cosine_distance(factors[i], factors[j]) - margin) <=
          1e-3) {
        return false;
      }
    }
  }
  return true;
}

// -- through-network fixtures ------------------------------------------------

struct NetFixture {
  SegNetwork net;
  std::vector<FogPassFilter> filters;      // one per tap, frozen in the check
  std::vector<std::vector<double>> images;  // [img,img,3] row-major
  std::vector<std::uint8_t> labels;         // shared by the paired scenes
  int img = 0;
};

NetFixture make_fixture(Rng& rng, const Dims& d, int num_images) {
  NetFixture f;
  f.img = d.img;
  f.net = SegNetwork::build(rng.next_u64(), d.classes, d.width);
  const int style_dim = d.width * (d.width + 1) / 2;
  f.filters.push_back(
      FogPassFilter::build(rng.next_u64(), "C1", style_dim, d.factor_dim));
  f.filters.push_back(
      FogPassFilter::build(rng.next_u64(), "R1", style_dim, d.factor_dim));
  // Each image leans on a different color channel. Plain iid draws give every
  // image the same channel-correlation structure, leaving the fog factors
  // nearly parallel and their cosine-distance gradients ill-conditioned.
  for (int i = 0; i < num_images; ++i) {
    std::vector<double> v(static_cast<std::size_t>(3LL * d.img * d.img));
    for (std::size_t p = 0; p < v.size(); ++p) {
      const bool hot = static_cast<int>(p % 3) == i % 3;
      v[p] = hot ? rng.uniform(0.55, 0.95) : rng.uniform(0.05, 0.25);
    }
    f.images.push_back(std::move(v));
  }
  f.labels.resize(static_cast<std::size_t>(d.img) * d.img);
  for (auto& l : f.labels) {
    l = rng.uniform() < 0.1
            ? kIgnoreLabel
            : static_cast<std::uint8_t>(
                  rng.below(static_cast<std::uint64_t>(d.classes)));
  }
  f.labels[0] = 0;  // at least one counted pixel, whatever the draw
  return f;
}

int spec_index(const SegNetwork& net, const std::string& name) {
  for (std::size_t i = 0; i < net.specs().size(); ++i) {
    if (net.specs()[i].name == name) return static_cast<int>(i);
  }
  throw ShapeError("grad battery: network has no parameter " + name);
}

// Network leaves for a check: every parameter enters as a constant except the
// named ones, which are replaced by the grad-checked leaves.
std::vector<Tensor> net_leaves_with(
    Tape& t, const SegNetwork& net,
    const std::vector<std::pair<std::string, Tensor>>& checked) {
  std::vector<Tensor> leaves;
  leaves.reserve(net.specs().size());
  for (std::size_t i = 0; i < net.specs().size(); ++i) {
    const auto it = std::find_if(
        checked.begin(), checked.end(),
        [&](const auto& c) { return c.first == net.specs()[i].name; });
    leaves.push_back(it == checked.end()
                         ? t.constant(net.specs()[i].shape, net.params()[i])
                         : it->second);
  }
  return leaves;
}

std::vector<std::vector<Tensor>> frozen_filters(Tape& t, const NetFixture& f) {
  std::vector<std::vector<Tensor>> ls;
  for (const auto& fl : f.filters) {
    ls.push_back(fl.place(t, /*requires_grad=*/false));
  }
  return ls;
}

struct ImagePass {
  Tensor probs;  // unset when only the taps were run
  std::vector<FogFactor> factors;
  std::vector<int> tap_spatial;
};

ImagePass pass_image(Tape& t, const NetFixture& f,
                     const std::vector<Tensor>& net_leaves,
                     const std::vector<std::vector<Tensor>>& filter_leaves,
                     std::size_t image_index, const std::string& domain,
                     std::uint64_t pair_id, bool taps_only = false) {
  const Tensor im = t.constant({f.img, f.img, 3}, f.images[image_index]);
  std::vector<std::pair<std::string, Tensor>> taps;
  ImagePass out;
  if (taps_only) {
    taps = seg_forward_taps(t, f.net, net_leaves, im);
  } else {
    ForwardResult r = seg_forward(t, f.net, net_leaves, im);
    out.probs = r.probs;
    taps = std::move(r.taps);
  }
  for (std::size_t k = 0; k < f.filters.size(); ++k) {
    const auto tap =
        std::find_if(taps.begin(), taps.end(), [&](const auto& p) {
          return p.first == f.filters[k].tap();
        });
    if (tap == taps.end()) {
      throw ShapeError("grad battery: forward produced no tap " +
                       f.filters[k].tap());
    }
    const GramVector u = style_vector(t, tap->second, tap->first);
    FogFactor ff = fog_factor(t, f.filters[k], filter_leaves[k], u);
    ff.domain = domain;
    ff.pair_id = pair_id;
    out.factors.push_back(ff);
    out.tap_spatial.push_back(u.spatial_size);
  }
  return out;
}

std::vector<FsmPair> pairs_between(const NetFixture& f, const ImagePass& a,
                                   const ImagePass& b) {
  std::vector<FsmPair> ps;
  for (std::size_t k = 0; k < f.filters.size(); ++k) {
    ps.push_back(
        {a.factors[k], b.factors[k], f.filters[k].dim(), a.tap_spatial[k]});
  }
  return ps;
}

// Pairwise cosine distances of the fixture's through-tap factors (first
// filter), evaluated on a scratch tape.
std::vector<double> through_tap_distances(const NetFixture& f) {
  Tape t;
  const auto leaves = net_leaves_with(t, f.net, {});
  const auto fl = frozen_filters(t, f);
  std::vector<std::vector<double>> vals;
  for (std::size_t i = 0; i < f.images.size(); ++i) {
    const ImagePass pass = pass_image(t, f, leaves, fl, i, "CW", 1, true);
    const auto v = pass.factors[0].values.values();
    vals.emplace_back(v.begin(), v.end());
  }
  std::vector<double> ds;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    for (std::size_t j = i + 1; j < vals.size(); ++j) {
      ds.push_back(host_cosine_distance(vals[i], vals[j]));
    }
  }
  return ds;
}

}  // namespace

CheckScale parse_check_scale(const std::string& name) {
  if (name == "micro") return CheckScale::Micro;
  if (name == "small") return CheckScale::Small;
  throw ConfigError("grad-check scale must be micro or small, got \"" + name +
                    "\"");
}

bool CheckReport::all_passed() const {
  return std::all_of(cases.begin(), cases.end(), [&](const CheckCase& c) {
    return c.max_rel_error < tolerance;
  });
}

double CheckReport::worst() const {
  double w = 0.0;
  for (const auto& c : cases) w = std::max(w, c.max_rel_error);
  return w;
}

CheckReport run_grad_checks(CheckScale scale, std::uint64_t master_seed) {
  const Dims d = dims_for(scale);
  const std::int64_t bn = numel(d.box);
  CheckReport rep;

  const auto run = [&](const std::string& name,
                       const std::function<BuiltCase(Rng&, std::uint64_t)>&
                           build) {
    for (int attempt = 0;; ++attempt) {
      const auto a = static_cast<std::uint64_t>(attempt);
      Rng rng(mix_seed(master_seed, "battery." + name, a));
      const std::uint64_t probe_seed =
          mix_seed(master_seed, "battery.probe." + name, a);
      BuiltCase c = build(rng, probe_seed);
      try {
        const double err =
            grad_check(c.fn, c.params, kEpsilon,
                       mix_seed(master_seed, "battery.coords." + name, a));
        rep.cases.push_back({name, err, attempt + 1});
        return;
      } catch (const ShapeError&) {  // kink graze: redraw the point
        if (attempt + 1 >= kMaxAttempts) throw;
      }
    }
  };

  // -- element-wise and shape primitives ------------------------------------

  const auto box2 = [&](Rng& rng) -> std::vector<GradCheckParam> {
    return {{d.box, draw(rng, bn, -2.0, 2.0)},
            {d.box, draw(rng, bn, -2.0, 2.0)}};
  };
  const auto binary_case = [&](const char* name,
                               Tensor (Tape::*op)(Tensor, Tensor)) {
    run(name, [&, op](Rng& rng, std::uint64_t ps) -> BuiltCase {
      return {[op, ps](Tape& t, const std::vector<Tensor>& p) {
                return probe_sum(t, (t.*op)(p[0], p[1]), ps);
              },
              box2(rng)};
    });
  };
  const auto unary_case = [&](const char* name, double lo, double hi,
                              const std::function<Tensor(Tape&, Tensor)>& op) {
    run(name, [&, lo, hi, op](Rng& rng, std::uint64_t ps) -> BuiltCase {
      return {[op, ps](Tape& t, const std::vector<Tensor>& p) {
                return probe_sum(t, op(t, p[0]), ps);
              },
              {{d.box, draw(rng, bn, lo, hi)}}};
    });
  };

  binary_case("add", &Tape::add);
  binary_case("sub", &Tape::sub);
  binary_case("mul", &Tape::mul);
  run("div", [&](Rng& rng, std::uint64_t ps) -> BuiltCase {
    return {[ps](Tape& t, const std::vector<Tensor>& p) {
              return probe_sum(t, t.div(p[0], p[1]), ps);
            },
            {{d.box, draw(rng, bn, -2.0, 2.0)},
             {d.box, draw_offset(rng, bn, 0.4, 1.1)}}};
  });
  unary_case("scale", -2.0, 2.0,
             [](Tape& t, Tensor a) { return t.scale(a, 1.7); });
  unary_case("add-scalar", -2.0, 2.0,
             [](Tape& t, Tensor a) { return t.add_scalar(a, 0.8); });
  unary_case("clamp-min", -1.0, 1.0,
             [](Tape& t, Tensor a) { return t.clamp_min(a, 0.25); });
  unary_case("leaky-relu", -1.0, 1.0,
             [](Tape& t, Tensor a) { return t.leaky_relu(a, 0.01); });
  unary_case("log", 0.2, 3.0, [](Tape& t, Tensor a) { return t.log(a); });
  unary_case("square", -2.0, 2.0,
             [](Tape& t, Tensor a) { return t.square(a); });
  unary_case("sqrt", 0.3, 2.5, [](Tape& t, Tensor a) { return t.sqrt(a); });
  unary_case("reshape", -2.0, 2.0, [n = bn](Tape& t, Tensor a) {
    return t.reshape(a, {static_cast<int>(n)});
  });
  unary_case("transpose", -2.0, 2.0,
             [](Tape& t, Tensor a) { return t.transpose(a, {2, 0, 1}); });
  run("concat", [&](Rng& rng, std::uint64_t ps) -> BuiltCase {
    Shape second = d.box;
    second[1] += 2;
    return {[ps](Tape& t, const std::vector<Tensor>& p) {
              return probe_sum(t, t.concat({p[0], p[1]}, 1), ps);
            },
            {{d.box, draw(rng, bn, -2.0, 2.0)},
             {second, draw(rng, numel(second), -2.0, 2.0)}}};
  });
  run("gather-repeats", [&](Rng& rng, std::uint64_t ps) -> BuiltCase {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(d.vec) + 3);
    for (auto& i : idx) {
      i = static_cast<std::int64_t>(
          rng.below(static_cast<std::uint64_t>(d.vec)));
    }
    idx[1] = idx[0];  // guaranteed repeat: backward must scatter-add
    return {[idx, ps](Tape& t, const std::vector<Tensor>& p) {
              return probe_sum(t, t.gather(p[0], idx), ps);
            },
            {{{d.vec}, draw(rng, d.vec, -2.0, 2.0)}}};
  });

  // -- linear algebra and reductions ----------------------------------------

  run("matmul", [&](Rng& rng, std::uint64_t ps) -> BuiltCase {
    const Shape as{d.m, d.k}, bs{d.k, d.n};
    return {[ps](Tape& t, const std::vector<Tensor>& p) {
              return probe_sum(t, t.matmul(p[0], p[1]), ps);
            },
            {{as, draw(rng, numel(as), -1.5, 1.5)},
             {bs, draw(rng, numel(bs), -1.5, 1.5)}}};
  });
  run("dot", [&](Rng& rng, std::uint64_t) -> BuiltCase {
    return {[](Tape& t, const std::vector<Tensor>& p) {
              return t.dot(p[0], p[1]);
            },
            {{{d.vec}, draw(rng, d.vec, -2.0, 2.0)},
             {{d.vec}, draw(rng, d.vec, -2.0, 2.0)}}};
  });
  run("l2-norm", [&](Rng& rng, std::uint64_t) -> BuiltCase {
    return {[](Tape& t, const std::vector<Tensor>& p) {
              return t.l2_norm(p[0]);
            },
            {{{d.vec}, draw_offset(rng, d.vec, 0.3, 1.2)}}};
  });
  run("sum", [&](Rng& rng, std::uint64_t) -> BuiltCase {
    return {[](Tape& t, const std::vector<Tensor>& p) { return t.sum(p[0]); },
            {{d.box, draw(rng, bn, -2.0, 2.0)}}};
  });
  run("mean", [&](Rng& rng, std::uint64_t) -> BuiltCase {
    return {[](Tape& t, const std::vector<Tensor>& p) { return t.mean(p[0]); },
            {{d.box, draw(rng, bn, -2.0, 2.0)}}};
  });
  unary_case("sum-axis", -2.0, 2.0,
             [](Tape& t, Tensor a) { return t.sum_axis(a, 1); });
  unary_case("mean-axis", -2.0, 2.0,
             [](Tape& t, Tensor a) { return t.mean_axis(a, 2); });

  // -- nn primitives --------------------------------------------------------

  const auto conv_case = [&](const char* name, int kh, int stride, int pad) {
    run(name, [&, kh, stride, pad](Rng& rng, std::uint64_t ps) -> BuiltCase {
      const int ic = d.box[0], oc = d.box[0] + 1;
      const Shape xs{ic, d.box[1] + 2, d.box[2] + 2};
      const Shape ws{oc, ic, kh, kh};
      return {[stride, pad, ps](Tape& t, const std::vector<Tensor>& p) {
                return probe_sum(t, t.conv2d(p[0], p[1], p[2], stride, pad),
                                 ps);
              },
              {{xs, draw(rng, numel(xs), -1.5, 1.5)},
               {ws, draw(rng, numel(ws), -1.0, 1.0)},
               {{oc}, draw(rng, oc, -0.5, 0.5)}}};
    });
  };
  conv_case("conv3x3-s1p1", 3, 1, 1);
  conv_case("conv3x3-s1p0", 3, 1, 0);
  conv_case("conv3x3-s2p1", 3, 2, 1);
  conv_case("conv1x1", 1, 1, 0);
  unary_case("upsample2x", -2.0, 2.0,
             [](Tape& t, Tensor a) { return t.upsample2x(a); });
  run("softmax", [&](Rng& rng, std::uint64_t ps) -> BuiltCase {
    const Shape ls{d.box[1], d.box[2], d.classes};
    return {[ps](Tape& t, const std::vector<Tensor>& p) {
              return probe_sum(t, t.softmax(p[0], 2), ps);
            },
            {{ls, draw(rng, numel(ls), -2.0, 2.0)}}};
  });

  // -- style machinery ------------------------------------------------------

  run("gram", [&](Rng& rng, std::uint64_t ps) -> BuiltCase {
    return {[ps](Tape& t, const std::vector<Tensor>& p) {
              return probe_sum(t, gram(t, p[0]), ps);
            },
            {{d.box, draw(rng, bn, -1.5, 1.5)}}};
  });
  run("style-vector", [&](Rng& rng, std::uint64_t ps) -> BuiltCase {
    return {[ps](Tape& t, const std::vector<Tensor>& p) {
              return probe_sum(t, style_vector(t, p[0], "C1").values, ps);
            },
            {{d.box, draw(rng, bn, -1.5, 1.5)}}};
  });
  run("factor-norm-vs-filter", [&](Rng& rng, std::uint64_t) -> BuiltCase {
    const int c = d.box[0];
    const auto filter = FogPassFilter::build(rng.next_u64(), "C1",
                                             c * (c + 1) / 2, d.factor_dim);
    const auto fmap = draw(rng, bn, -1.5, 1.5);
    std::vector<GradCheckParam> params;
    for (std::size_t i = 0; i < filter.shapes().size(); ++i) {
      params.push_back({filter.shapes()[i], filter.params()[i]});
    }
    return {[filter, fmap, fshape = d.box](Tape& t,
                                           const std::vector<Tensor>& p) {
              const GramVector u =
                  style_vector(t, t.constant(fshape, fmap), filter.tap());
              const FogFactor f = fog_factor(t, filter, p, u);
              return t.dot(f.values, f.values);
            },
            std::move(params)};
  });

  // -- losses on direct leaves ----------------------------------------------

  const auto contrastive_case = [&](const char* name, bool content) {
    run(name, [&, content](Rng& rng, std::uint64_t) -> BuiltCase {
      std::vector<std::vector<double>> vals;
      // resample until every pairwise distance sits clear of the hinge
      for (int tries = 0; tries < 200; ++tries) {
        vals.clear();
        for (int i = 0; i < 4; ++i) {
          vals.push_back(draw_offset(rng, d.factor_dim, 0.25, 1.0));
        }
        if (clear_of_hinge(vals, 0.1)) break;
      }
      std::vector<GradCheckParam> params;
      for (auto& v : vals) params.push_back({{d.factor_dim}, std::move(v)});
      return {[content](Tape& t, const std::vector<Tensor>& p) {
                static constexpr const char* fog_dom[4] = {"CW", "CW", "SF",
                                                           "RF"};
                static constexpr const char* con_dom[4] = {"CW", "SF", "CW",
                                                           "SF"};
                static constexpr std::uint64_t con_pair[4] = {1, 1, 2, 2};
                std::vector<FogFactor> fs;
                for (std::size_t i = 0; i < 4; ++i) {
                  fs.push_back({p[i], content ? con_dom[i] : fog_dom[i], "C1",
                                content ? con_pair[i] : i});
                }
                return content ? content_filter_loss(t, fs, 0.1)
                               : filter_loss(t, fs, 0.1);
              },
              std::move(params)};
    });
  };
  contrastive_case("contrastive-fog", false);
  contrastive_case("contrastive-content", true);

  run("seg-ce", [&](Rng& rng, std::uint64_t) -> BuiltCase {
    const Shape ls{d.box[1], d.box[2], d.classes};
    std::vector<std::uint8_t> labels(
        static_cast<std::size_t>(d.box[1]) * d.box[2]);
    for (auto& l : labels) {
      l = rng.uniform() < 0.15
              ? kIgnoreLabel
              : static_cast<std::uint8_t>(
                    rng.below(static_cast<std::uint64_t>(d.classes)));
    }
    labels[0] = 0;
    return {[labels](Tape& t, const std::vector<Tensor>& p) {
              return seg_ce(t, t.softmax(p[0], 2), labels);
            },
            {{ls, draw(rng, numel(ls), -1.0, 1.0)}}};
  });
  run("fsm-pair", [&](Rng& rng, std::uint64_t) -> BuiltCase {
    return {[fd = d.factor_dim](Tape& t, const std::vector<Tensor>& p) {
              const FogFactor a{p[0], "CW", "C1", 0};
              const FogFactor b{p[1], "SF", "C1", 0};
              return fsm_loss(t, a, b, fd, 25);
            },
            {{{d.factor_dim}, draw(rng, d.factor_dim, -2.0, 2.0)},
             {{d.factor_dim}, draw(rng, d.factor_dim, -2.0, 2.0)}}};
  });
  run("consistency", [&](Rng& rng, std::uint64_t) -> BuiltCase {
    const Shape ls{d.box[1], d.box[2], d.classes};
    return {[](Tape& t, const std::vector<Tensor>& p) {
              return consistency_loss(t, t.softmax(p[0], 2),
                                      t.softmax(p[1], 2));
            },
            {{ls, draw(rng, numel(ls), -1.0, 1.0)},
             {ls, draw(rng, numel(ls), -1.0, 1.0)}}};
  });

  // -- full objectives through a throwaway network --------------------------
  // Checked tensors: the stem conv weights (farthest from every loss) and the
  // head bias (nearest); everything else enters as constants.

  const auto fixture_params = [](const NetFixture& f) {
    const auto iw = static_cast<std::size_t>(spec_index(f.net, "stem.w"));
    const auto ib = static_cast<std::size_t>(spec_index(f.net, "head.b"));
    return std::vector<GradCheckParam>{
        {f.net.specs()[iw].shape, f.net.params()[iw]},
        {f.net.specs()[ib].shape, f.net.params()[ib]}};
  };

  run("objective-cw-sf", [&](Rng& rng, std::uint64_t) -> BuiltCase {
    auto fx = std::make_shared<const NetFixture>(make_fixture(rng, d, 2));
    return {[fx](Tape& t, const std::vector<Tensor>& p) {
              const auto leaves = net_leaves_with(
                  t, fx->net, {{"stem.w", p[0]}, {"head.b", p[1]}});
              const auto fl = frozen_filters(t, *fx);
              const ImagePass cw = pass_image(t, *fx, leaves, fl, 0, "CW", 1);
              const ImagePass sf = pass_image(t, *fx, leaves, fl, 1, "SF", 1);
              return objective_cw_sf(t, cw.probs, sf.probs, fx->labels,
                                     pairs_between(*fx, cw, sf), kNetWeights);
            },
            fixture_params(*fx)};
  });
  run("objective-cw-rf", [&](Rng& rng, std::uint64_t) -> BuiltCase {
    auto fx = std::make_shared<const NetFixture>(make_fixture(rng, d, 2));
    return {[fx](Tape& t, const std::vector<Tensor>& p) {
              const auto leaves = net_leaves_with(
                  t, fx->net, {{"stem.w", p[0]}, {"head.b", p[1]}});
              const auto fl = frozen_filters(t, *fx);
              const ImagePass cw = pass_image(t, *fx, leaves, fl, 0, "CW", 1);
              const ImagePass rf = pass_image(t, *fx, leaves, fl, 1, "RF", 1);
              return objective_d_rf(t, cw.probs, fx->labels,
                                    pairs_between(*fx, cw, rf), kNetWeights);
            },
            fixture_params(*fx)};
  });
  run("objective-step-total", [&](Rng& rng, std::uint64_t) -> BuiltCase {
    auto fx = std::make_shared<const NetFixture>(make_fixture(rng, d, 3));
    return {[fx](Tape& t, const std::vector<Tensor>& p) {
              const auto leaves = net_leaves_with(
                  t, fx->net, {{"stem.w", p[0]}, {"head.b", p[1]}});
              const auto fl = frozen_filters(t, *fx);
              const ImagePass cw = pass_image(t, *fx, leaves, fl, 0, "CW", 1);
              const ImagePass sf = pass_image(t, *fx, leaves, fl, 1, "SF", 1);
              const ImagePass rf = pass_image(t, *fx, leaves, fl, 2, "RF", 1);
              Tensor loss =
                  objective_cw_sf(t, cw.probs, sf.probs, fx->labels,
                                  pairs_between(*fx, cw, sf), kNetWeights);
              loss = t.add(loss, objective_d_rf(t, cw.probs, fx->labels,
                                                pairs_between(*fx, cw, rf),
                                                kNetWeights));
              return t.add(loss, objective_d_rf(t, sf.probs, fx->labels,
                                                pairs_between(*fx, sf, rf),
                                                kNetWeights));
            },
            fixture_params(*fx)};
  });
  run("fsm-through-net", [&](Rng& rng, std::uint64_t) -> BuiltCase {
    auto fx = std::make_shared<const NetFixture>(make_fixture(rng, d, 2));
    const auto iw = static_cast<std::size_t>(spec_index(fx->net, "stem.w"));
    return {[fx](Tape& t, const std::vector<Tensor>& p) {
              const auto leaves =
                  net_leaves_with(t, fx->net, {{"stem.w", p[0]}});
              const auto fl = frozen_filters(t, *fx);
              // tap-only forwards; the decoder plays no part in this loss
              const ImagePass cw =
                  pass_image(t, *fx, leaves, fl, 0, "CW", 1, true);
              const ImagePass sf =
                  pass_image(t, *fx, leaves, fl, 1, "SF", 1, true);
              Tensor acc = t.scalar(0.0);
              for (const FsmPair& pr : pairs_between(*fx, cw, sf)) {
                acc = t.add(acc, fsm_loss(t, pr.a, pr.b, pr.d_l, pr.n_l));
              }
              return acc;
            },
            {{fx->net.specs()[iw].shape, fx->net.params()[iw]}}};
  });
  run("contrastive-through-taps", [&](Rng& rng, std::uint64_t) -> BuiltCase {
    // All three factors carry distinct domains, so every pair pays the
    // cross-domain hinge: redraw until at least one distance sits strictly
    // inside the margin (otherwise the loss is identically zero around the
    // point) and none grazes it.
    const double margin = 0.5;
    NetFixture base;
    for (int tries = 0; tries < 50; ++tries) {
      base = make_fixture(rng, d, 3);
      base.net.tap_layers = {"C1"};  // stem tap only keeps each probe cheap
      base.filters.resize(1);
      bool active = false, clear = true;
      for (const double dist : through_tap_distances(base)) {
        if (dist < margin - 1e-3) active = true;
        if (std::abs(dist - margin) <= 1e-3) clear = false;
      }
      if (active && clear) break;
    }
    auto fx = std::make_shared<const NetFixture>(std::move(base));
    // Real-activation style entries span orders of magnitude, so the first
    // filter layer's smallest weight gradients (dead-unit slope times a
    // near-zero style entry) sit below the central-difference noise floor.
    // That layer is checked at a balanced point in factor-norm-vs-filter;
    // here the remaining filter tensors go through the real tap pipeline.
    std::vector<GradCheckParam> params;
    for (std::size_t i = 1; i < fx->filters[0].shapes().size(); ++i) {
      params.push_back({fx->filters[0].shapes()[i], fx->filters[0].params()[i]});
    }
    return {[fx, margin](Tape& t, const std::vector<Tensor>& p) {
              const auto leaves = net_leaves_with(t, fx->net, {});
              const auto fl = std::vector<Tensor>{
                  t.constant(fx->filters[0].shapes()[0],
                             fx->filters[0].params()[0]),
                  p[0], p[1], p[2]};
              static constexpr const char* doms[3] = {"CW", "SF", "RF"};
              std::vector<FogFactor> fs;
              for (std::size_t i = 0; i < 3; ++i) {
                const auto taps = seg_forward_taps(
                    t, fx->net, leaves,
                    t.constant({fx->img, fx->img, 3}, fx->images[i]));
                const GramVector u =
                    style_vector(t, taps[0].second, taps[0].first);
                FogFactor ff = fog_factor(t, fx->filters[0], fl, u);
                ff.domain = doms[i];
                ff.pair_id = i + 1;
                fs.push_back(ff);
              }
              return filter_loss(t, fs, margin);
            },
            std::move(params)};
  });

  return rep;
}

void print_report(std::ostream& os, const CheckReport& rep) {
  char line[128];
  for (const auto& c : rep.cases) {
    std::snprintf(line, sizeof line, "%-26s %9.3e  %s%s", c.name.c_str(),
                  c.max_rel_error,
                  c.max_rel_error < rep.tolerance ? "ok" : "FAIL",
                  c.attempts > 1 ? "  (point resampled)" : "");
    os << line << '\n';
  }
  std::snprintf(line, sizeof line, "%zu cases, worst %.3e, tolerance %.0e: %s",
                rep.cases.size(), rep.worst(), rep.tolerance,
                rep.all_passed() ? "PASS" : "FAIL");
  os << line << '\n';
}

}  // namespace foginv
