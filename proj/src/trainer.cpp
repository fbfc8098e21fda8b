#include "foginv/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <utility>

#include "foginv/errors.hpp"
#include "foginv/io.hpp"
#include "foginv/losses.hpp"

namespace foginv {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Dataset

namespace {

std::array<double, 3> parse_airlight(const std::string& s) {
  std::array<double, 3> a{};
  std::size_t start = 0;
  for (int c = 0; c < 3; ++c) {
    const auto colon = s.find(':', start);
    const std::string part = colon == std::string::npos
                                 ? s.substr(start)
                                 : s.substr(start, colon - start);
    a[static_cast<std::size_t>(c)] = std::stod(part);
    start = colon == std::string::npos ? s.size() : colon + 1;
  }
  return a;
}

std::string label_path_of(const std::string& image_path) {
  // <stem>.ppm -> <stem>.labels.pgm
  if (image_path.size() < 4 ||
      image_path.compare(image_path.size() - 4, 4, ".ppm") != 0) {
    throw IoError("manifest path without .ppm extension: " + image_path);
  }
  return image_path.substr(0, image_path.size() - 4) + ".labels.pgm";
}

}  // namespace

Dataset::Dataset(fs::path root) : root_(std::move(root)) {
  const auto rows = read_csv(root_ / "manifest.csv");
  if (rows.empty() ||
      rows.front() != std::vector<std::string>{"path", "domain", "split",
                                               "pair_id", "seed", "beta",
                                               "airlight"}) {
    throw IoError((root_ / "manifest.csv").string() +
                  ": missing or unrecognized manifest header");
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 7) {
      throw IoError("manifest row " + std::to_string(i) + ": expected 7 fields");
    }
    ManifestRow m;
    m.path = r[0];
    m.domain = r[1];
    m.split = r[2];
    m.pair_id = std::stoull(r[3]);
    m.seed = std::stoull(r[4]);
    m.beta = std::stod(r[5]);
    m.airlight = parse_airlight(r[6]);
    by_split_domain_[{m.split, m.domain}].push_back(m);
    if (m.split == "train" && m.domain == "SF") sf_by_pair_[m.pair_id] = m;
  }
}

const std::vector<ManifestRow>& Dataset::rows(const std::string& split,
                                              const std::string& domain) const {
  const auto it = by_split_domain_.find({split, domain});
  if (it == by_split_domain_.end() || it->second.empty()) {
    throw DomainError("dataset has no " + split + "/" + domain + " samples");
  }
  return it->second;
}

bool Dataset::has(const std::string& split, const std::string& domain) const {
  const auto it = by_split_domain_.find({split, domain});
  return it != by_split_domain_.end() && !it->second.empty();
}

const ManifestRow& Dataset::sf_counterpart(std::uint64_t pair_id) const {
  const auto it = sf_by_pair_.find(pair_id);
  if (it == sf_by_pair_.end()) {
    throw DomainError("no SF counterpart for pair " + std::to_string(pair_id));
  }
  return it->second;
}

Sample Dataset::load(const ManifestRow& row, bool with_labels) const {
  const ImageU8 img = load_ppm(root_ / row.path);
  Sample s;
  s.height = img.height;
  s.width = img.width;
  s.domain = row.domain;
  s.pair_id = row.pair_id;
  s.image.resize(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    s.image[i] = static_cast<double>(img.pixels[i]) / 255.0;
  }
  if (with_labels) {
    const std::string lp = label_path_of(row.path);
    label_reads_.push_back(lp);
    const ImageU8 lab = load_pgm(root_ / lp);
    if (lab.width != img.width || lab.height != img.height) {
      throw IoError(lp + ": label size differs from image size");
    }
    s.labels = lab.pixels;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Mini-batches

void hflip(Sample& s) {
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width / 2; ++x) {
      const int xr = s.width - 1 - x;
      for (int c = 0; c < 3; ++c) {
        std::swap(s.image[(static_cast<std::size_t>(y) * s.width + x) * 3 + c],
                  s.image[(static_cast<std::size_t>(y) * s.width + xr) * 3 + c]);
      }
      if (!s.labels.empty()) {
        std::swap(s.labels[static_cast<std::size_t>(y) * s.width + x],
                  s.labels[static_cast<std::size_t>(y) * s.width + xr]);
      }
    }
  }
}

MiniBatch sample_minibatch(const Dataset& data, Rng& rng, int batch_size,
                           bool flip) {
  const auto& cw_rows = data.rows("train", "CW");
  const auto& rf_rows = data.rows("train", "RF");
  if (static_cast<int>(cw_rows.size()) < batch_size ||
      static_cast<int>(rf_rows.size()) < batch_size) {
    throw DomainError("training split smaller than the per-domain batch size");
  }
  const auto cw_idx =
      rng.sample_without_replacement(static_cast<int>(cw_rows.size()), batch_size);
  const auto rf_idx =
      rng.sample_without_replacement(static_cast<int>(rf_rows.size()), batch_size);

  MiniBatch b;
  for (const int i : cw_idx) {
    const ManifestRow& cw = cw_rows[static_cast<std::size_t>(i)];
    b.cw.push_back(data.load(cw, /*with_labels=*/true));
    b.sf.push_back(data.load(data.sf_counterpart(cw.pair_id), /*with_labels=*/true));
  }
  for (const int i : rf_idx) {
    b.rf.push_back(data.load(rf_rows[static_cast<std::size_t>(i)],
                             /*with_labels=*/false));
  }
  if (flip) {
    for (std::size_t i = 0; i < b.cw.size(); ++i) {
      if (rng.below(2)) {  // counterparts share the coin to stay pixel-aligned
        hflip(b.cw[i]);
        hflip(b.sf[i]);
      }
    }
    for (auto& s : b.rf) {
      if (rng.below(2)) hflip(s);
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Optimizers

void SgdMomentum::step(std::size_t slot, std::vector<double>& p,
                       std::span<const double> g, double lr) {
  if (slot >= velocity.size()) velocity.resize(slot + 1);
  auto& v = velocity[slot];
  if (v.empty()) v.assign(p.size(), 0.0);
  if (g.size() != p.size() || v.size() != p.size()) {
    throw ShapeError("sgd step: size mismatch");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

void Adamax::step(std::size_t slot, std::vector<double>& p,
                  std::span<const double> g, double lr) {
  if (slot >= slots.size()) slots.resize(slot + 1);
  auto& s = slots[slot];
  if (s.m.empty()) {
    s.m.assign(p.size(), 0.0);
    s.u.assign(p.size(), 0.0);
  }
  if (g.size() != p.size() || s.m.size() != p.size()) {
    throw ShapeError("adamax step: size mismatch");
  }
  s.t += 1;
  const double bias = 1.0 - std::pow(beta1, static_cast<double>(s.t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g[i];
    s.u[i] = std::max(beta2 * s.u[i], std::abs(g[i]));
    p[i] -= (lr / bias) * s.m[i] / (s.u[i] + eps);
  }
}

double poly_decay(double lr0, int iter, int total, double power) {
  if (total <= 0) throw DomainError("poly_decay: total must be positive");
  if (iter < 0 || iter > total) {
    throw DomainError("poly_decay: need 0 <= iter <= total");
  }
  return lr0 * std::pow(1.0 - static_cast<double>(iter) / total, power);
}

// ---------------------------------------------------------------------------
// Trainer

FogPassFilter make_filter_for_tap(const SegNetwork& net, const std::string& tap,
                                  int factor_dim, std::uint64_t seed) {
  int channels = 0;
  if (tap == "C1" || tap == "R1") {
    channels = net.width_base();
  } else {
    throw ConfigError("no tap named '" + tap + "'");
  }
  const int in_dim = channels * (channels + 1) / 2;
  return FogPassFilter::build(seed, tap, in_dim, factor_dim);
}

Trainer::Trainer(RunConfig cfg, const Dataset& data)
    : cfg_(std::move(cfg)),
      data_(data),
      net_(SegNetwork::build(mix_seed(cfg_.master_seed, "init.net", 0),
                             cfg_.num_classes, cfg_.width_base)),
      seg_opt_(cfg_.seg_momentum) {
  cfg_.validate();
  net_.tap_layers = cfg_.tap_layers;
  for (const auto& tap : cfg_.tap_layers) {
    filters_.push_back(make_filter_for_tap(
        net_, tap, cfg_.factor_dim,
        mix_seed(cfg_.master_seed, "init.filter." + tap, 0)));
  }
  seg_steps_total_ =
      cfg_.pretrain_iters + (cfg_.total_iters - cfg_.warmup_iters);
}

std::pair<double, double> Trainer::current_seg_lrs() const {
  if (seg_steps_total_ == 0) return {cfg_.lr_encoder, cfg_.lr_decoder};
  // steps beyond the planned schedule reuse the final (smallest) rate
  const int it = std::min(seg_steps_done_, seg_steps_total_ - 1);
  return {poly_decay(cfg_.lr_encoder, it, seg_steps_total_, cfg_.poly_power),
          poly_decay(cfg_.lr_decoder, it, seg_steps_total_, cfg_.poly_power)};
}

MiniBatch Trainer::batch_for(const char* tag, int iter) const {
  Rng rng(mix_seed(cfg_.master_seed, tag, static_cast<std::uint64_t>(iter)));
  return sample_minibatch(data_, rng, cfg_.batch_per_domain, cfg_.augment_flip);
}

namespace {

Tensor image_tensor(Tape& t, const Sample& s) {
  return t.constant({s.height, s.width, 3}, std::vector<double>(s.image));
}

// Mean ("mean") or plain sum ("sum") of per-pair terms.
Tensor reduce_pairs(Tape& t, const std::vector<Tensor>& terms,
                    const std::string& mode) {
  Tensor acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = t.add(acc, terms[i]);
  if (mode == "mean" && terms.size() > 1) {
    acc = t.scale(acc, 1.0 / static_cast<double>(terms.size()));
  }
  return acc;
}

}  // namespace

std::vector<std::pair<std::string, double>> Trainer::filter_step(
    const MiniBatch& batch) {
  Tape t;
  const auto net_leaves = net_.place(t, /*requires_grad=*/false);
  std::vector<std::vector<Tensor>> filter_leaves;
  filter_leaves.reserve(filters_.size());
  for (const auto& f : filters_) {
    filter_leaves.push_back(f.place(t, /*requires_grad=*/true));
  }

  std::vector<std::vector<FogFactor>> factors(filters_.size());
  const auto feed = [&](const Sample& s) {
    const Tensor img = image_tensor(t, s);
    const auto taps = seg_forward_taps(t, net_, net_leaves, img);
    for (std::size_t k = 0; k < filters_.size(); ++k) {
      const auto tap_it =
          std::find_if(taps.begin(), taps.end(), [&](const auto& p) {
            return p.first == filters_[k].tap();
          });
      if (tap_it == taps.end()) {
        throw ShapeError("forward produced no tap " + filters_[k].tap());
      }
      const GramVector u = style_vector(t, tap_it->second, tap_it->first);
      FogFactor f = fog_factor(t, filters_[k], filter_leaves[k], u);
      f.domain = s.domain;
      f.pair_id = s.pair_id;
      factors[k].push_back(f);
    }
  };
  for (const auto& s : batch.cw) feed(s);
  for (const auto& s : batch.sf) feed(s);
  for (const auto& s : batch.rf) feed(s);

  std::vector<std::pair<std::string, double>> out;
  Tensor total;
  for (std::size_t k = 0; k < filters_.size(); ++k) {
    const Tensor loss = filter_loss(t, factors[k], cfg_.margin);
    out.emplace_back(filters_[k].tap(), loss.item());
    total = k == 0 ? loss : t.add(total, loss);
  }
  if (!std::isfinite(total.item())) {
    throw TrainAbort("non-finite filter loss");
  }
  t.backward(total);
  for (std::size_t k = 0; k < filters_.size(); ++k) {
    const double lr = cfg_.filter_lr(filters_[k].tap());
    auto& params = filters_[k].params();
    for (std::size_t j = 0; j < params.size(); ++j) {
      filter_opt_.step(k * 4 + j, params[j], filter_leaves[k][j].grad(), lr);
    }
  }
  return out;
}

Trainer::SegStats Trainer::seg_update(const MiniBatch& batch, bool cw_only) {
  Tape t;
  const auto net_leaves = net_.place(t, /*requires_grad=*/true);
  std::vector<std::vector<Tensor>> filter_leaves;
  if (!cw_only) {
    for (const auto& f : filters_) {
      filter_leaves.push_back(f.place(t, /*requires_grad=*/false));
    }
  }

  struct PerImage {
    Tensor probs;
    std::vector<FogFactor> factors;  // per tap
    std::vector<int> tap_spatial;    // n_l per tap
  };
  const auto forward = [&](const Sample& s) {
    const ForwardResult r = seg_forward(t, net_, net_leaves, image_tensor(t, s));
    PerImage out;
    out.probs = r.probs;
    if (!cw_only) {
      for (std::size_t k = 0; k < filters_.size(); ++k) {
        const auto tap_it =
            std::find_if(r.taps.begin(), r.taps.end(), [&](const auto& p) {
              return p.first == filters_[k].tap();
            });
        if (tap_it == r.taps.end()) {
          throw ShapeError("forward produced no tap " + filters_[k].tap());
        }
        const GramVector u = style_vector(t, tap_it->second, tap_it->first);
        FogFactor f = fog_factor(t, filters_[k], filter_leaves[k], u);
        f.domain = s.domain;
        f.pair_id = s.pair_id;
        out.factors.push_back(f);
        out.tap_spatial.push_back(u.spatial_size);
      }
    }
    return out;
  };

  const int n = static_cast<int>(batch.cw.size());
  std::vector<PerImage> cw, sf, rf;
  for (const auto& s : batch.cw) cw.push_back(forward(s));
  if (!cw_only) {
    for (const auto& s : batch.sf) sf.push_back(forward(s));
    for (const auto& s : batch.rf) rf.push_back(forward(s));
  }

  std::vector<Tensor> ce_slices, fsm_slices, con_slices;

  if (cw_only) {
    std::vector<Tensor> ce;
    for (int i = 0; i < n; ++i) {
      ce.push_back(seg_ce(t, cw[static_cast<std::size_t>(i)].probs,
                          batch.cw[static_cast<std::size_t>(i)].labels));
    }
    ce_slices.push_back(reduce_pairs(t, ce, cfg_.pair_reduction));
  } else {
    // One style-matching term for a (clearer, foggier) pair at tap k, with
    // the configured side of the gradient detached.
    const auto fsm_term = [&](const PerImage& clear, const PerImage& foggy,
                              std::size_t k) {
      FogFactor a = clear.factors[k];
      FogFactor b = foggy.factors[k];
      if (cfg_.fsm_direction == FsmDirection::FogToClear) {
        a.values = t.detach(a.values);
      } else if (cfg_.fsm_direction == FsmDirection::ClearToFog) {
        b.values = t.detach(b.values);
      }
      return fsm_loss(t, a, b, filters_[k].dim(), clear.tap_spatial[k]);
    };
    const auto fsm_over_taps = [&](const PerImage& clear,
                                   const PerImage& foggy) {
      Tensor acc = fsm_term(clear, foggy, 0);
      for (std::size_t k = 1; k < filters_.size(); ++k) {
        acc = t.add(acc, fsm_term(clear, foggy, k));
      }
      return acc;
    };

    std::vector<Tensor> ce_cwsf, fsm_cwsf, con_cwsf;
    std::vector<Tensor> ce_cwrf, fsm_cwrf;
    std::vector<Tensor> ce_sfrf, fsm_sfrf;
    for (int ii = 0; ii < n; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      const Tensor ce_cw = seg_ce(t, cw[i].probs, batch.cw[i].labels);
      const Tensor ce_sf = seg_ce(t, sf[i].probs, batch.sf[i].labels);
      ce_cwsf.push_back(t.add(ce_cw, ce_sf));
      fsm_cwsf.push_back(fsm_over_taps(cw[i], sf[i]));
      con_cwsf.push_back(consistency_loss(t, cw[i].probs, sf[i].probs));
      ce_cwrf.push_back(ce_cw);
      fsm_cwrf.push_back(fsm_over_taps(cw[i], rf[i]));
      ce_sfrf.push_back(ce_sf);
      fsm_sfrf.push_back(fsm_over_taps(sf[i], rf[i]));
    }
    ce_slices.push_back(reduce_pairs(t, ce_cwsf, cfg_.pair_reduction));
    ce_slices.push_back(reduce_pairs(t, ce_cwrf, cfg_.pair_reduction));
    ce_slices.push_back(reduce_pairs(t, ce_sfrf, cfg_.pair_reduction));
    fsm_slices.push_back(reduce_pairs(t, fsm_cwsf, cfg_.pair_reduction));
    fsm_slices.push_back(reduce_pairs(t, fsm_cwrf, cfg_.pair_reduction));
    fsm_slices.push_back(reduce_pairs(t, fsm_sfrf, cfg_.pair_reduction));
    con_slices.push_back(reduce_pairs(t, con_cwsf, cfg_.pair_reduction));
  }

  const Tensor ce_sum = reduce_pairs(t, ce_slices, "sum");
  Tensor total = ce_sum;
  SegStats stats;
  stats.ce = ce_sum.item();
  if (!fsm_slices.empty()) {
    const Tensor fsm_sum = reduce_pairs(t, fsm_slices, "sum");
    stats.fsm = fsm_sum.item();
    total = t.add(total, t.scale(fsm_sum, cfg_.lambda_fsm));
  }
  if (!con_slices.empty()) {
    const Tensor con_sum = reduce_pairs(t, con_slices, "sum");
    stats.con = con_sum.item();
    total = t.add(total, t.scale(con_sum, cfg_.lambda_con));
  }
  stats.total = total.item();
  if (!std::isfinite(stats.total)) {
    throw TrainAbort("non-finite segmentation loss");
  }

  t.backward(total);
  const auto [lr_e, lr_d] = current_seg_lrs();
  const auto& specs = net_.specs();
  for (std::size_t j = 0; j < specs.size(); ++j) {
    seg_opt_.step(j, net_.params()[j], net_leaves[j].grad(),
                  specs[j].decoder ? lr_d : lr_e);
  }
  ++seg_steps_done_;
  return stats;
}

Trainer::SegStats Trainer::seg_step(const MiniBatch& batch) {
  return seg_update(batch, /*cw_only=*/false);
}

Trainer::SegStats Trainer::pretrain_step(const MiniBatch& batch) {
  return seg_update(batch, /*cw_only=*/true);
}

void Trainer::save_checkpoint(const fs::path& dir) const {
  net_.save(dir);
  for (const auto& f : filters_) f.save(dir / "fogpass" / f.tap());
  cfg_.save(dir / "config.txt");
}

void Trainer::train(const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir.string() + ": " + ec.message());
  log_.clear();

  std::string where = "start";
  try {
    for (int it = 1; it <= cfg_.pretrain_iters; ++it) {
      where = "pretrain iteration " + std::to_string(it);
      const auto [lr_e, lr_d] = current_seg_lrs();
      const SegStats st = pretrain_step(batch_for("batch.pretrain", it));
      TrainLogRow row;
      row.iter = it;
      row.phase = "pretrain";
      row.seg_ce = st.ce;
      row.total = st.total;
      row.lr_encoder = lr_e;
      row.lr_decoder = lr_d;
      log_.push_back(std::move(row));
    }
    save_checkpoint(out_dir / "baseline");
    if (cfg_.warmup_iters == 0) save_checkpoint(out_dir / "warmup");

    for (int it = 1; it <= cfg_.total_iters; ++it) {
      const bool warm = it <= cfg_.warmup_iters;
      where = std::string(warm ? "warmup" : "alternate") + " iteration " +
              std::to_string(it);
      const auto fl = filter_step(batch_for("batch.filter", it));
      TrainLogRow row;
      row.iter = it;
      row.phase = warm ? "warmup" : "alternate";
      for (const auto& [tap, v] : fl) {
        if (tap == "C1") row.filter_loss_c1 = v;
        if (tap == "R1") row.filter_loss_r1 = v;
      }
      const auto [lr_e, lr_d] = current_seg_lrs();
      row.lr_encoder = lr_e;
      row.lr_decoder = lr_d;
      if (!warm) {
        const SegStats st = seg_step(batch_for("batch.seg", it));
        row.seg_ce = st.ce;
        row.fsm = st.fsm;
        row.con = st.con;
        row.total = st.total;
      }
      log_.push_back(std::move(row));
      if (it == cfg_.warmup_iters) save_checkpoint(out_dir / "warmup");
      if (cfg_.checkpoint_every > 0 && it % cfg_.checkpoint_every == 0 &&
          it != cfg_.total_iters) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "iter_%06d", it);
        save_checkpoint(out_dir / buf);
      }
    }
    save_checkpoint(out_dir / "final");
  } catch (const TrainAbort& e) {
    save_checkpoint(out_dir / "last_good");
    write_train_log(out_dir / "train_log.csv", log_);
    throw TrainAbort("aborted at " + where + ": " + e.what());
  } catch (const DomainError& e) {
    save_checkpoint(out_dir / "last_good");
    write_train_log(out_dir / "train_log.csv", log_);
    throw TrainAbort("aborted at " + where + ": " + e.what());
  }
  write_train_log(out_dir / "train_log.csv", log_);
}

void write_train_log(const fs::path& path, const std::vector<TrainLogRow>& rows) {
  std::vector<std::vector<std::string>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    out.push_back({std::to_string(r.iter), r.phase,
                   format_double(r.filter_loss_c1),
                   format_double(r.filter_loss_r1), format_double(r.seg_ce),
                   format_double(r.fsm), format_double(r.con),
                   format_double(r.total), format_double(r.lr_encoder),
                   format_double(r.lr_decoder)});
  }
  write_csv(path,
            {"iter", "phase", "filter_loss_C1", "filter_loss_R1", "seg_ce",
             "fsm", "con", "total", "lr_encoder", "lr_decoder"},
            out);
}

// ---------------------------------------------------------------------------
// Content-pass filters

double content_filter_step(const SegNetwork& net,
                           std::vector<FogPassFilter>& filters, Adamax& opt,
                           const MiniBatch& batch, const RunConfig& cfg) {
  Tape t;
  const auto net_leaves = net.place(t, /*requires_grad=*/false);
  std::vector<std::vector<Tensor>> leaves;
  for (const auto& f : filters) {
    leaves.push_back(f.place(t, /*requires_grad=*/true));
  }
  std::vector<std::vector<FogFactor>> factors(filters.size());
  const auto feed = [&](const Sample& s) {
    const Tensor img = image_tensor(t, s);
    const auto taps = seg_forward_taps(t, net, net_leaves, img);
    for (std::size_t k = 0; k < filters.size(); ++k) {
      const auto tap_it =
          std::find_if(taps.begin(), taps.end(), [&](const auto& p) {
            return p.first == filters[k].tap();
          });
      if (tap_it == taps.end()) {
        throw ShapeError("forward produced no tap " + filters[k].tap());
      }
      const GramVector u = style_vector(t, tap_it->second, tap_it->first);
      FogFactor f = fog_factor(t, filters[k], leaves[k], u);
      f.domain = s.domain;
      f.pair_id = s.pair_id;
      factors[k].push_back(f);
    }
  };
  for (const auto& s : batch.cw) feed(s);
  for (const auto& s : batch.sf) feed(s);
  for (const auto& s : batch.rf) feed(s);

  Tensor total;
  for (std::size_t k = 0; k < filters.size(); ++k) {
    const Tensor loss = content_filter_loss(t, factors[k], cfg.margin);
    total = k == 0 ? loss : t.add(total, loss);
  }
  const double value = total.item();
  if (!std::isfinite(value)) throw TrainAbort("non-finite content-filter loss");
  t.backward(total);
  for (std::size_t k = 0; k < filters.size(); ++k) {
    const double lr = cfg.filter_lr(filters[k].tap());
    auto& params = filters[k].params();
    for (std::size_t j = 0; j < params.size(); ++j) {
      opt.step(k * 4 + j, params[j], leaves[k][j].grad(), lr);
    }
  }
  return value;
}

std::vector<FogPassFilter> train_content_filters(const RunConfig& cfg,
                                                 const SegNetwork& net,
                                                 const Dataset& data) {
  SegNetwork frozen = net;  // local copy so the tap list can be aligned
  frozen.tap_layers = cfg.tap_layers;
  std::vector<FogPassFilter> filters;
  for (const auto& tap : cfg.tap_layers) {
    filters.push_back(make_filter_for_tap(
        frozen, tap, cfg.factor_dim,
        mix_seed(cfg.master_seed, "init.content." + tap, 0)));
  }
  Adamax opt;
  for (int it = 1; it <= cfg.warmup_iters; ++it) {
    Rng rng(mix_seed(cfg.master_seed, "batch.content",
                     static_cast<std::uint64_t>(it)));
    const MiniBatch b =
        sample_minibatch(data, rng, cfg.batch_per_domain, cfg.augment_flip);
    content_filter_step(frozen, filters, opt, b, cfg);
  }
  return filters;
}

}  // namespace foginv
