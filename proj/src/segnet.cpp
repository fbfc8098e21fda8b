#include "foginv/segnet.hpp"

#include <cmath>
#include <map>

#include "foginv/io.hpp"
#include "foginv/rng.hpp"

namespace foginv {

namespace {

constexpr double kSlope = 0.01;  // leaky-rectifier negative slope

std::string shape_csv(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[static_cast<std::size_t>(i)]);
  }
  return out;
}

Shape parse_shape_csv(const std::string& s) {
  Shape out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t x = s.find('x', start);
    const std::string part =
        x == std::string::npos ? s.substr(start) : s.substr(start, x - start);
    out.push_back(std::stoi(part));
    if (x == std::string::npos) break;
    start = x + 1;
  }
  return out;
}

}  // namespace

SegNetwork SegNetwork::build(std::uint64_t seed, int num_classes,
                             int width_base) {
  if (width_base < 8 || width_base > 64) {
    throw ConfigError("build_network: width_base " +
                      std::to_string(width_base) + " outside [8, 64]");
  }
  if (num_classes < 2 || num_classes > 16) {
    throw ConfigError("build_network: num_classes " +
                      std::to_string(num_classes) + " outside [2, 16]");
  }
  SegNetwork net;
  net.num_classes_ = num_classes;
  net.width_base_ = width_base;
  const int w = width_base, c = num_classes;
  net.specs_ = {
      {"stem.w", {w, 3, 3, 3}, false},
      {"stem.b", {w}, false},
      {"b1.c1.w", {w, w, 3, 3}, false},
      {"b1.c1.b", {w}, false},
      {"b1.c2.w", {w, w, 3, 3}, false},
      {"b1.c2.b", {w}, false},
      {"b1.proj.w", {w, w, 1, 1}, false},
      {"b1.proj.b", {w}, false},
      {"b2.c1.w", {2 * w, w, 3, 3}, false},
      {"b2.c1.b", {2 * w}, false},
      {"b2.c2.w", {2 * w, 2 * w, 3, 3}, false},
      {"b2.c2.b", {2 * w}, false},
      {"b2.proj.w", {2 * w, w, 1, 1}, false},
      {"b2.proj.b", {2 * w}, false},
      {"b3.c1.w", {2 * w, 2 * w, 3, 3}, false},
      {"b3.c1.b", {2 * w}, false},
      {"b3.c2.w", {2 * w, 2 * w, 3, 3}, false},
      {"b3.c2.b", {2 * w}, false},
      {"dec1.w", {w, 3 * w, 3, 3}, true},
      {"dec1.b", {w}, true},
      {"dec2.w", {w, w, 3, 3}, true},
      {"dec2.b", {w}, true},
      {"head.w", {c, w, 1, 1}, true},
      {"head.b", {c}, true},
  };
  Rng rng(seed);
  for (const LayerSpec& spec : net.specs_) {
    std::vector<double> v(static_cast<std::size_t>(numel(spec.shape)), 0.0);
    if (spec.shape.size() == 4) {  // He fan-in init for conv weights, zero bias
      const double fan_in = static_cast<double>(spec.shape[1]) * spec.shape[2] *
                            spec.shape[3];
      const double std = std::sqrt(2.0 / fan_in);
      for (auto& x : v) x = rng.normal() * std;
    }
    net.params_.push_back(std::move(v));
  }
  return net;
}

std::int64_t SegNetwork::num_parameters() const {
  std::int64_t n = 0;
  for (const auto& s : specs_) n += numel(s.shape);
  return n;
}

std::vector<Tensor> SegNetwork::place(Tape& tape, bool requires_grad) const {
  std::vector<Tensor> leaves;
  leaves.reserve(specs_.size());
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    leaves.push_back(tape.leaf(specs_[i].shape, params_[i], requires_grad));
  }
  return leaves;
}

namespace {

struct ParamMap {
  const std::vector<LayerSpec>& specs;
  const std::vector<Tensor>& leaves;
  Tensor operator[](const std::string& name) const {
    for (std::size_t i = 0; i < specs.size(); ++i) {
      if (specs[i].name == name) return leaves[i];
    }
    throw ShapeError("forward: unknown parameter " + name);
  }
};

bool wants_tap(const SegNetwork& net, const char* tap) {
  for (const auto& t : net.tap_layers) {
    if (t == tap) return true;
  }
  return false;
}

// stem + first residual block; returns (C1 activation, R1 activation)
std::pair<Tensor, Tensor> encoder_front(Tape& t, const ParamMap& P, Tensor x) {
  auto c1 = t.leaky_relu(t.conv2d(x, P["stem.w"], P["stem.b"], 1, 1), kSlope);
  auto m = t.leaky_relu(t.conv2d(c1, P["b1.c1.w"], P["b1.c1.b"], 2, 1), kSlope);
  m = t.conv2d(m, P["b1.c2.w"], P["b1.c2.b"], 1, 1);
  auto sc = t.conv2d(c1, P["b1.proj.w"], P["b1.proj.b"], 2, 0);
  auto r1 = t.leaky_relu(t.add(m, sc), kSlope);
  return {c1, r1};
}

}  // namespace

ForwardResult seg_forward(Tape& t, const SegNetwork& net,
                          const std::vector<Tensor>& leaves, Tensor image) {
  if (leaves.size() != net.specs().size()) {
    throw ShapeError("forward: expected " + std::to_string(net.specs().size()) +
                     " parameter leaves, got " + std::to_string(leaves.size()));
  }
  const Shape& is = image.shape();
  if (is.size() != 3 || is[2] != 3) {
    throw ShapeError("forward: image must be [H,W,3], got " + shape_str(is));
  }
  const ParamMap P{net.specs(), leaves};
  auto x = t.transpose(image, {2, 0, 1});  // planar [3,H,W]
  auto [c1, r1] = encoder_front(t, P, x);

  auto m = t.leaky_relu(t.conv2d(r1, P["b2.c1.w"], P["b2.c1.b"], 2, 1), kSlope);
  m = t.conv2d(m, P["b2.c2.w"], P["b2.c2.b"], 1, 1);
  auto sc = t.conv2d(r1, P["b2.proj.w"], P["b2.proj.b"], 2, 0);
  auto f2 = t.leaky_relu(t.add(m, sc), kSlope);

  m = t.leaky_relu(t.conv2d(f2, P["b3.c1.w"], P["b3.c1.b"], 1, 1), kSlope);
  m = t.conv2d(m, P["b3.c2.w"], P["b3.c2.b"], 1, 1);
  auto f3 = t.leaky_relu(t.add(m, f2), kSlope);  // identity shortcut

  auto d1 = t.concat({t.upsample2x(f3), r1}, 0);
  d1 = t.leaky_relu(t.conv2d(d1, P["dec1.w"], P["dec1.b"], 1, 1), kSlope);
  auto d2 = t.leaky_relu(
      t.conv2d(t.upsample2x(d1), P["dec2.w"], P["dec2.b"], 1, 1), kSlope);
  auto logits_chw = t.conv2d(d2, P["head.w"], P["head.b"], 1, 0);

  ForwardResult out;
  out.logits = t.transpose(logits_chw, {1, 2, 0});
  out.probs = t.softmax(out.logits, 2);
  if (wants_tap(net, "C1")) out.taps.emplace_back("C1", c1);
  if (wants_tap(net, "R1")) out.taps.emplace_back("R1", r1);
  return out;
}

std::vector<std::pair<std::string, Tensor>> seg_forward_taps(
    Tape& t, const SegNetwork& net, const std::vector<Tensor>& leaves,
    Tensor image) {
  const ParamMap P{net.specs(), leaves};
  auto x = t.transpose(image, {2, 0, 1});
  std::vector<std::pair<std::string, Tensor>> taps;
  if (wants_tap(net, "R1")) {
    auto [c1, r1] = encoder_front(t, P, x);
    if (wants_tap(net, "C1")) taps.emplace_back("C1", c1);
    taps.emplace_back("R1", r1);
  } else {
    auto c1 = t.leaky_relu(t.conv2d(x, P["stem.w"], P["stem.b"], 1, 1), kSlope);
    if (wants_tap(net, "C1")) taps.emplace_back("C1", c1);
  }
  return taps;
}

void SegNetwork::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::string taps;
  for (std::size_t i = 0; i < tap_layers.size(); ++i) {
    if (i) taps += '+';
    taps += tap_layers[i];
  }
  std::vector<std::vector<std::string>> rows = {
      {"num_classes", std::to_string(num_classes_), "meta"},
      {"width_base", std::to_string(width_base_), "meta"},
      {"taps", taps, "meta"},
  };
  for (const auto& s : specs_) {
    rows.push_back({s.name, shape_csv(s.shape), s.decoder ? "decoder" : "encoder"});
  }
  write_csv(dir / "network.csv", {"name", "shape", "group"}, rows);
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    save_fgten(dir / (specs_[i].name + ".fgten"), specs_[i].shape, params_[i]);
  }
}

SegNetwork SegNetwork::load(const std::filesystem::path& dir) {
  const auto rows = read_csv(dir / "network.csv");
  if (rows.empty() || rows[0] != std::vector<std::string>{"name", "shape", "group"}) {
    throw IoError((dir / "network.csv").string() + ": unexpected header");
  }
  std::map<std::string, std::string> meta;
  std::vector<LayerSpec> specs;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 3) {
      throw IoError((dir / "network.csv").string() + ": bad row " +
                    std::to_string(r));
    }
    if (rows[r][2] == "meta") {
      meta[rows[r][0]] = rows[r][1];
    } else {
      specs.push_back(
          {rows[r][0], parse_shape_csv(rows[r][1]), rows[r][2] == "decoder"});
    }
  }
  if (!meta.count("num_classes") || !meta.count("width_base") ||
      !meta.count("taps")) {
    throw IoError((dir / "network.csv").string() + ": missing meta rows");
  }
  SegNetwork net = build(0, std::stoi(meta["num_classes"]),
                         std::stoi(meta["width_base"]));
  if (specs.size() != net.specs_.size()) {
    throw IoError((dir / "network.csv").string() + ": layer count mismatch");
  }
  net.tap_layers.clear();
  std::size_t start = 0;
  const std::string& taps = meta["taps"];
  while (start <= taps.size() && !taps.empty()) {
    const std::size_t plus = taps.find('+', start);
    net.tap_layers.push_back(plus == std::string::npos
                                 ? taps.substr(start)
                                 : taps.substr(start, plus - start));
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].name != net.specs_[i].name ||
        specs[i].shape != net.specs_[i].shape) {
      throw IoError((dir / "network.csv").string() + ": spec mismatch at " +
                    specs[i].name);
    }
    const auto t = load_fgten(dir / (specs[i].name + ".fgten"));
    if (t.shape != specs[i].shape) {
      throw IoError((dir / (specs[i].name + ".fgten")).string() +
                    ": shape mismatch");
    }
    net.params_[i] = t.values;
  }
  return net;
}

}  // namespace foginv
