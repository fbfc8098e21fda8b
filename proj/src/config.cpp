#include "foginv/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "foginv/errors.hpp"
#include "foginv/io.hpp"

namespace foginv {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected unsigned integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::string> parse_taps(const std::string& v) {
  std::vector<std::string> taps;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) taps.push_back(item);
  }
  return taps;
}

}  // namespace

std::string to_string(FsmDirection d) {
  switch (d) {
    case FsmDirection::Bidirectional: return "bidirectional";
    case FsmDirection::FogToClear: return "fog_to_clear";
    case FsmDirection::ClearToFog: return "clear_to_fog";
  }
  return "bidirectional";
}

FsmDirection parse_fsm_direction(const std::string& s) {
  if (s == "bidirectional") return FsmDirection::Bidirectional;
  if (s == "fog_to_clear") return FsmDirection::FogToClear;
  if (s == "clear_to_fog") return FsmDirection::ClearToFog;
  throw ConfigError("fsm_direction: unknown mode '" + s +
                    "' (bidirectional | fog_to_clear | clear_to_fog)");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "data_root") data_root = value;
  else if (key == "image_size") image_size = parse_int(key, value);
  else if (key == "num_classes") num_classes = parse_int(key, value);
  else if (key == "train_cw") train_cw = parse_int(key, value);
  else if (key == "train_rf") train_rf = parse_int(key, value);
  else if (key == "eval_cw") eval_cw = parse_int(key, value);
  else if (key == "eval_rf") eval_rf = parse_int(key, value);
  else if (key == "beta") beta = parse_double(key, value);
  else if (key == "width_base") width_base = parse_int(key, value);
  else if (key == "tap_layers") tap_layers = parse_taps(value);
  else if (key == "factor_dim") factor_dim = parse_int(key, value);
  else if (key == "lambda_fsm") lambda_fsm = parse_double(key, value);
  else if (key == "lambda_con") lambda_con = parse_double(key, value);
  else if (key == "margin") margin = parse_double(key, value);
  else if (key == "batch_per_domain") batch_per_domain = parse_int(key, value);
  else if (key == "pretrain_iters") pretrain_iters = parse_int(key, value);
  else if (key == "warmup_iters") warmup_iters = parse_int(key, value);
  else if (key == "total_iters") total_iters = parse_int(key, value);
  else if (key == "checkpoint_every") checkpoint_every = parse_int(key, value);
  else if (key == "seg_momentum") seg_momentum = parse_double(key, value);
  else if (key == "lr_encoder") lr_encoder = parse_double(key, value);
  else if (key == "lr_decoder") lr_decoder = parse_double(key, value);
  else if (key == "poly_power") poly_power = parse_double(key, value);
  else if (key == "filter_lr_c1") filter_lr_c1 = parse_double(key, value);
  else if (key == "filter_lr_r1") filter_lr_r1 = parse_double(key, value);
  else if (key == "fsm_direction") fsm_direction = parse_fsm_direction(value);
  else if (key == "pair_reduction") pair_reduction = value;
  else if (key == "augment_flip") augment_flip = parse_bool(key, value);
  else if (key == "master_seed") master_seed = parse_u64(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open config");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " +
                        e.what());
    }
  }
}

std::string RunConfig::serialize() const {
  std::string taps;
  for (std::size_t i = 0; i < tap_layers.size(); ++i) {
    if (i) taps += ",";
    taps += tap_layers[i];
  }
  std::string out;
  const auto kv = [&out](const std::string& k, const std::string& v) {
    out += k + " = " + v + "\n";
  };
  kv("data_root", data_root);
  kv("image_size", std::to_string(image_size));
  kv("num_classes", std::to_string(num_classes));
  kv("train_cw", std::to_string(train_cw));
  kv("train_rf", std::to_string(train_rf));
  kv("eval_cw", std::to_string(eval_cw));
  kv("eval_rf", std::to_string(eval_rf));
  kv("beta", format_double(beta));
  kv("width_base", std::to_string(width_base));
  kv("tap_layers", taps);
  kv("factor_dim", std::to_string(factor_dim));
  kv("lambda_fsm", format_double(lambda_fsm));
  kv("lambda_con", format_double(lambda_con));
  kv("margin", format_double(margin));
  kv("batch_per_domain", std::to_string(batch_per_domain));
  kv("pretrain_iters", std::to_string(pretrain_iters));
  kv("warmup_iters", std::to_string(warmup_iters));
  kv("total_iters", std::to_string(total_iters));
  kv("checkpoint_every", std::to_string(checkpoint_every));
  kv("seg_momentum", format_double(seg_momentum));
  kv("lr_encoder", format_double(lr_encoder));
  kv("lr_decoder", format_double(lr_decoder));
  kv("poly_power", format_double(poly_power));
  kv("filter_lr_c1", format_double(filter_lr_c1));
  kv("filter_lr_r1", format_double(filter_lr_r1));
  kv("fsm_direction", to_string(fsm_direction));
  kv("pair_reduction", pair_reduction);
  kv("augment_flip", augment_flip ? "true" : "false");
  kv("master_seed", std::to_string(master_seed));
  return out;
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string() + ": cannot write config");
  out << serialize();
  if (!out) throw IoError(path.string() + ": write failed");
}

void RunConfig::validate() const {
  const auto bad = [](const std::string& msg) { throw ConfigError(msg); };
  if (image_size < 16) bad("image_size must be >= 16");
  if (num_classes < 4 || num_classes > 12) {
    bad("num_classes must be in [4, 12]");
  }
  if (train_cw < 1 || train_rf < 1 || eval_cw < 1 || eval_rf < 1) {
    bad("every split count must be >= 1");
  }
  if (beta < 0.0) bad("beta must be >= 0");
  if (width_base < 8 || width_base > 64) bad("width_base must be in [8, 64]");
  if (tap_layers.empty()) bad("tap_layers must name at least one tap");
  for (const auto& t : tap_layers) {
    if (t != "C1" && t != "R1") bad("unknown tap layer '" + t + "'");
  }
  if (factor_dim < 1) bad("factor_dim must be >= 1");
  if (margin <= 0.0) bad("margin must be > 0");
  if (lambda_fsm < 0.0 || lambda_con < 0.0) {
    bad("loss weights must be >= 0");
  }
  if (batch_per_domain < 2) {
    bad("batch_per_domain must be >= 2 (pair losses need pairs)");
  }
  if (pretrain_iters < 0) bad("pretrain_iters must be >= 0");
  if (warmup_iters < 0 || total_iters < 1 || warmup_iters > total_iters) {
    bad("need 0 <= warmup_iters <= total_iters");
  }
  if (checkpoint_every < 0) bad("checkpoint_every must be >= 0");
  if (seg_momentum < 0.0 || seg_momentum >= 1.0) {
    bad("seg_momentum must be in [0, 1)");
  }
  if (lr_encoder <= 0.0 || lr_decoder <= 0.0 || filter_lr_c1 <= 0.0 ||
      filter_lr_r1 <= 0.0) {
    bad("learning rates must be > 0");
  }
  if (poly_power <= 0.0) bad("poly_power must be > 0");
  if (pair_reduction != "mean" && pair_reduction != "sum") {
    bad("pair_reduction must be mean or sum");
  }
  if (batch_per_domain > train_cw || batch_per_domain > train_rf) {
    bad("batch_per_domain exceeds a training split");
  }
}

double RunConfig::filter_lr(const std::string& tap) const {
  if (tap == "C1") return filter_lr_c1;
  if (tap == "R1") return filter_lr_r1;
  throw ConfigError("no filter learning rate for tap '" + tap + "'");
}

DatasetConfig RunConfig::dataset_config() const {
  DatasetConfig d;
  d.root = data_root;
  d.image_size = image_size;
  d.num_classes = num_classes;
  d.train_cw = train_cw;
  d.train_rf = train_rf;
  d.eval_cw = eval_cw;
  d.eval_rf = eval_rf;
  d.fog.beta = beta;
  d.master_seed = master_seed;
  return d;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig cfg;
  cfg.load_file(path);
  cfg.validate();
  return cfg;
}

}  // namespace foginv
