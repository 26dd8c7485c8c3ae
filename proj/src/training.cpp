#include "structssl/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <iostream>
#include <numbers>
#include <sstream>

#include "structssl/evaluation.hpp"
#include "structssl/ops.hpp"
#include "structssl/optim.hpp"

namespace structssl::training {

Variant parse_variant(const std::string& s) {
  if (s == "Z") return Variant::Z;
  if (s == "A") return Variant::A;
  if (s == "ZA" || s == "AZ") return Variant::ZA;
  throw std::invalid_argument("variant must be Z, A or ZA, got '" + s + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Z: return "Z";
    case Variant::A: return "A";
    case Variant::ZA: return "ZA";
  }
  return "?";
}

models::ModelConfig TrainConfig::model_config(std::size_t height, std::size_t width, std::size_t channels) const {
  models::ModelConfig m;
  m.height = height;
  m.width = width;
  m.channels = channels;
  m.S = S;
  m.D = D;
  m.K = K;
  m.conv_widths = conv_widths;
  m.hidden = hidden;
  m.tau = tau;
  return m;
}

// ---------------------------------------------------------------------------
// config file

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct LineContext {
  const std::string& source;
  std::size_t line;
  const std::string& key;

  [[noreturn]] void fail(const std::string& why) const {
    throw ConfigError(source + ":" + std::to_string(line) + ": " + key + ": " + why);
  }
};

std::uint64_t parse_uint(const std::string& v, const LineContext& ctx) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) ctx.fail("expected a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    ctx.fail("integer out of range '" + v + "'");
  }
}

std::size_t parse_positive(const std::string& v, const LineContext& ctx) {
  const auto n = parse_uint(v, ctx);
  if (n == 0) ctx.fail("must be positive");
  return static_cast<std::size_t>(n);
}

double parse_double(const std::string& v, const LineContext& ctx) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    ctx.fail("expected a number, got '" + v + "'");
  }
  if (used != v.size() || !std::isfinite(d)) ctx.fail("expected a finite number, got '" + v + "'");
  return d;
}

bool parse_bool(const std::string& v, const LineContext& ctx) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  ctx.fail("expected true/false, got '" + v + "'");
}

}  // namespace

TrainConfig parse_config_text(const std::string& text, const std::string& source) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string key = trim(line.substr(0, eq));
    LineContext ctx{source, line_no, key};
    if (eq == std::string::npos) ctx.fail("expected key=value");
    const std::string value = trim(line.substr(eq + 1));
    if (value.empty()) ctx.fail("missing value");

    if (key == "epochs") {
      cfg.epochs = parse_positive(value, ctx);
    } else if (key == "batch_size") {
      cfg.batch_size = parse_positive(value, ctx);
      if (cfg.batch_size < 2) ctx.fail("must be >= 2 (negatives come from the batch)");
    } else if (key == "augmentations") {
      cfg.augmentations = parse_positive(value, ctx);
    } else if (key == "learning_rate") {
      cfg.learning_rate = parse_double(value, ctx);
      if (!(cfg.learning_rate > 0.0)) ctx.fail("must be positive");
    } else if (key == "S") {
      cfg.S = parse_positive(value, ctx);
      if (cfg.S < 2) ctx.fail("must be >= 2");
    } else if (key == "D") {
      cfg.D = parse_positive(value, ctx);
    } else if (key == "K") {
      cfg.K = parse_positive(value, ctx);
      if (cfg.K < 2) ctx.fail("must be >= 2");
    } else if (key == "variant") {
      try {
        cfg.variant = parse_variant(value);
      } catch (const std::invalid_argument& e) {
        ctx.fail(e.what());
      }
    } else if (key == "seed") {
      cfg.seed = parse_uint(value, ctx);
    } else if (key == "probe_interval") {
      cfg.probe_interval = (value == "inf" || value == "none") ? 0 : parse_positive(value, ctx);
    } else if (key == "dataset") {
      cfg.dataset = value;
    } else if (key == "iterations") {
      cfg.iterations = static_cast<std::size_t>(parse_uint(value, ctx));
    } else if (key == "train_size") {
      cfg.train_size = parse_positive(value, ctx);
    } else if (key == "conv_widths") {
      cfg.conv_widths.clear();
      std::istringstream parts(value);
      std::string part;
      while (std::getline(parts, part, ',')) cfg.conv_widths.push_back(parse_positive(trim(part), ctx));
      if (cfg.conv_widths.empty()) ctx.fail("need at least one width");
    } else if (key == "hidden") {
      cfg.hidden = parse_positive(value, ctx);
    } else if (key == "tau") {
      cfg.tau = parse_double(value, ctx);
      if (!(cfg.tau > 0.0)) ctx.fail("must be positive");
    } else if (key == "probe_samples") {
      cfg.probe_samples = parse_positive(value, ctx);
    } else if (key == "record_wallclock") {
      cfg.record_wallclock = parse_bool(value, ctx);
    } else if (key == "prefetch") {
      cfg.prefetch = parse_bool(value, ctx);
    } else {
      ctx.fail("unknown key");
    }
  }
  return cfg;
}

TrainConfig parse_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("file not found: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path);
}

// ---------------------------------------------------------------------------
// augmentation and pairs

AugmentDraw sample_augment(Rng& rng) {
  AugmentDraw d;
  const double area = rng.uniform(0.6, 1.0);
  d.crop_side = std::sqrt(area);
  d.crop_x = rng.uniform(0.0, 1.0 - d.crop_side);
  d.crop_y = rng.uniform(0.0, 1.0 - d.crop_side);
  d.flip = rng.bernoulli(0.5);
  for (int c = 0; c < 3; ++c) {
    d.brightness[c] = rng.uniform(-0.2, 0.2);
    d.contrast[c] = rng.uniform(0.8, 1.2);
  }
  return d;
}

std::vector<double> apply_augment(std::span<const double> image, std::size_t h, std::size_t w, std::size_t c,
                                  const AugmentDraw& d) {
  if (image.size() != h * w * c) throw ShapeError("augment: image has " + std::to_string(image.size()) + " values, expected " + std::to_string(h * w * c));
  std::vector<double> out(image.size());
  const bool full_crop = d.crop_side == 1.0 && d.crop_x == 0.0 && d.crop_y == 0.0;
  if (full_crop) {
    std::copy(image.begin(), image.end(), out.begin());
  } else {
    // Bilinear resample of the crop window back to h x w, sampling at pixel centers.
    const double side_y = d.crop_side * static_cast<double>(h), side_x = d.crop_side * static_cast<double>(w);
    const double oy = d.crop_y * static_cast<double>(h), ox = d.crop_x * static_cast<double>(w);
    for (std::size_t y = 0; y < h; ++y) {
      double sy = oy + (static_cast<double>(y) + 0.5) * side_y / static_cast<double>(h) - 0.5;
      sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
      const auto y0 = static_cast<std::size_t>(sy);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t x = 0; x < w; ++x) {
        double sx = ox + (static_cast<double>(x) + 0.5) * side_x / static_cast<double>(w) - 0.5;
        sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
        const auto x0 = static_cast<std::size_t>(sx);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double fx = sx - static_cast<double>(x0);
        for (std::size_t ch = 0; ch < c; ++ch) {
          auto at = [&](std::size_t yy, std::size_t xx) { return image[(yy * w + xx) * c + ch]; };
          out[(y * w + x) * c + ch] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
        }
      }
    }
  }
  if (d.flip) {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w / 2; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) std::swap(out[(y * w + x) * c + ch], out[(y * w + (w - 1 - x)) * c + ch]);
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double gain = d.contrast[ch % 3], shift = d.brightness[ch % 3];
    if (gain == 1.0 && shift == 0.0) continue;
    double mean = 0.0;
    for (std::size_t p = 0; p < h * w; ++p) mean += out[p * c + ch];
    mean /= static_cast<double>(h * w);
    for (std::size_t p = 0; p < h * w; ++p) {
      auto& v = out[p * c + ch];
      v = std::clamp(v * gain + (1.0 - gain) * mean + shift, 0.0, 1.0);
    }
  }
  return out;
}

std::vector<double> augment(std::span<const double> image, std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
  return apply_augment(image, h, w, c, sample_augment(rng));
}

std::vector<std::size_t> derangement(std::size_t n, Rng& rng) {
  if (n < 2) throw std::invalid_argument("derangement needs at least 2 elements (a batch of 1 has no negative)");
  for (;;) {
    auto p = rng.permutation(n);
    bool fixed = false;
    for (std::size_t i = 0; i < n && !fixed; ++i) fixed = p[i] == i;
    if (!fixed) return p;
  }
}

BatchViews make_views(const data::Dataset& ds, const std::vector<std::size_t>& indices, const std::vector<AugmentDraw>& draws) {
  if (draws.size() != indices.size()) throw std::invalid_argument("make_views: one augmentation draw per anchor required");
  BatchViews v;
  v.indices = indices;
  v.anchors.reserve(indices.size() * ds.image_size());
  v.positives.reserve(indices.size() * ds.image_size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    auto img = ds.image(indices[r]);
    v.anchors.insert(v.anchors.end(), img.begin(), img.end());
    auto aug = apply_augment(img, ds.height, ds.width, ds.channels, draws[r]);
    v.positives.insert(v.positives.end(), aug.begin(), aug.end());
  }
  return v;
}

PairBatch build_pairs(const data::Dataset& ds, const BatchViews& views, const models::Model& model, std::uint64_t noise_seed,
                      Rng& rng, bool with_structure) {
  const std::size_t B = views.indices.size();
  if (B < 2) throw std::invalid_argument("build_pairs: batch of size " + std::to_string(B) + " has no negative");
  const auto& c = model.config;
  PairBatch pb;
  pb.indices = views.indices;
  pb.negative = derangement(B, rng);
  pb.anchors = models::images_to_nchw(views.anchors, B, ds.height, ds.width, ds.channels);
  pb.positives = models::images_to_nchw(views.positives, B, ds.height, ds.width, ds.channels);
  // Anchors and positives go through the encoder in one pass.
  Tensor both = ops::concat({pb.anchors, pb.positives}, 0);
  Tensor z_all = models::encode_batch(model.theta, both);
  pb.z = ops::narrow(z_all, 0, 0, B);
  pb.z_pos = ops::narrow(z_all, 0, B, B);
  pb.z_neg = ops::index_select(pb.z_pos, pb.negative);
  if (with_structure) {
    auto rel = models::mpnn_relations(z_all, model.eta, c.S, noise_seed);
    pb.h = ops::narrow(rel.structure, 0, 0, B);
    pb.a_pos = ops::narrow(rel.structure, 0, B, B);
    pb.a_neg = ops::index_select(pb.a_pos, pb.negative);
    pb.has_structure = true;
  }
  return pb;
}

// ---------------------------------------------------------------------------
// objective

Tensor nwj_bound(const Tensor& pos_scores, const Tensor& neg_scores, std::size_t* clamped) {
  Tensor neg_exp = ops::exp(ops::clamp_max(neg_scores, kExpClamp, clamped));
  return ops::sub(ops::mean(pos_scores), ops::scale(ops::mean(neg_exp), 1.0 / std::numbers::e));
}

CriticScores critic_scores(const PairBatch& pb, const models::Model& model) {
  CriticScores s;
  s.z_pos = models::critic_z_scores(model.critic.f, pb.z, pb.z_pos);
  s.z_neg = models::critic_z_scores(model.critic.f, pb.z, pb.z_neg);
  if (pb.has_structure) {
    s.a_pos = models::structure_bilinear(pb.h, model.critic.w, pb.a_pos);
    s.a_neg = models::structure_bilinear(pb.h, model.critic.w, pb.a_neg);
  }
  return s;
}

Objective nwj_objective(const CriticScores& s, Variant variant) {
  Objective obj;
  std::size_t cz = 0, ca = 0;
  const bool use_z = variant != Variant::A, use_a = variant != Variant::Z;
  if (use_a && s.a_pos.numel() != s.z_pos.numel()) throw std::invalid_argument("nwj_objective: structure scores missing for variant with A");
  Tensor bz = nwj_bound(s.z_pos, s.z_neg, &cz);
  obj.bound_z = bz.item();
  Tensor total;
  if (use_a) {
    Tensor ba = nwj_bound(s.a_pos, s.a_neg, &ca);
    obj.bound_a = ba.item();
    total = use_z ? ops::add(bz, ba) : ba;
  } else {
    total = bz;
  }
  obj.clamped = (use_z ? cz : 0) + (use_a ? ca : 0);
  obj.bound = total.item();
  obj.loss = ops::scale(total, -1.0);
  return obj;
}

Objective nwj_objective(const PairBatch& pb, const models::Model& model, Variant variant) {
  return nwj_objective(critic_scores(pb, model), variant);
}

// ---------------------------------------------------------------------------
// loop

namespace {

double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

std::string diagnostic(std::size_t iteration, const models::Model& model, double loss) {
  std::ostringstream os;
  os << "non-finite loss " << loss << " at iteration " << iteration << "; parameter norms:";
  for (const auto& [name, t] : model.named_parameters()) os << ' ' << name << '=' << l2_norm(t);
  return os.str();
}

struct Schedule {
  std::size_t per_epoch;
  std::size_t total;
};

}  // namespace

TrainResult train(const TrainConfig& config, const data::Dataset& train_set) {
  static const data::Dataset empty;
  return train(config, train_set, empty);
}

TrainResult train(const TrainConfig& config, const data::Dataset& train_set, const data::Dataset& probe_set) {
  if (train_set.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (config.batch_size < 2) throw std::invalid_argument("train: batch size must be >= 2");
  if (config.augmentations == 0) throw std::invalid_argument("train: augmentations must be positive");
  const std::size_t B = std::min(config.batch_size, train_set.size());
  if (B < 2) throw std::invalid_argument("train: dataset needs at least 2 images");
  const Schedule sched{train_set.size() / B,
                       config.iterations ? config.iterations : config.epochs * (train_set.size() / B)};

  TrainResult result{models::Model::init(config.model_config(train_set.height, train_set.width, train_set.channels),
                                         mix_seed(config.seed, 1)),
                     {}, 0, 0};
  if (config.epochs == 0 && config.iterations == 0) return result;
  models::Model& model = result.model;
  Adam adam(model.parameters(), AdamHyper{config.learning_rate});
  evaluation::PeriodicProbe probe(probe_set, config.probe_interval, config.seed, config.learning_rate);
  const bool with_structure = config.variant != Variant::Z;

  // Batch composition of iteration `it` is a pure function of the seed, so
  // prefetching cannot change results.
  std::vector<std::size_t> order;
  std::size_t order_epoch = SIZE_MAX;
  auto batch_indices = [&](std::size_t it) {
    const std::size_t epoch = it / sched.per_epoch, slot = it % sched.per_epoch;
    if (epoch != order_epoch) {
      Rng r(mix_seed(config.seed, epoch, 3));
      order = r.permutation(train_set.size());
      order_epoch = epoch;
    }
    return std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(slot * B),
                                    order.begin() + static_cast<std::ptrdiff_t>((slot + 1) * B));
  };
  auto views_for = [&](std::size_t it, std::vector<std::size_t> idx) {
    const std::size_t epoch = it / sched.per_epoch;
    std::vector<AugmentDraw> draws;
    draws.reserve(idx.size());
    for (auto i : idx) {
      // Each image owns a pool of `augmentations` draws, cycled across epochs.
      Rng r(mix_seed(config.seed, i, 0xA000 + epoch % config.augmentations));
      draws.push_back(sample_augment(r));
    }
    return make_views(train_set, idx, draws);
  };

  const auto t0 = std::chrono::steady_clock::now();
  std::future<BatchViews> pending;
  if (config.prefetch) pending = std::async(std::launch::async, views_for, 0, batch_indices(0));

  for (std::size_t it = 0; it < sched.total; ++it) {
    BatchViews views;
    if (config.prefetch) {
      views = pending.get();
      if (it + 1 < sched.total) pending = std::async(std::launch::async, views_for, it + 1, batch_indices(it + 1));
    } else {
      views = views_for(it, batch_indices(it));
    }
    MetricRow row;
    row.iteration = it;
    {
      Tape tape;
      TapeScope scope(tape);
      Rng pair_rng(mix_seed(config.seed, it, 4));
      PairBatch pb = build_pairs(train_set, views, model, mix_seed(config.seed, it, 2), pair_rng, with_structure);
      Objective obj = nwj_objective(pb, model, config.variant);
      const double loss = obj.loss.item();
      if (!std::isfinite(loss)) throw TrainingError(diagnostic(it, model, loss));
      tape.backward(obj.loss);
      row.bound = obj.bound;
      row.loss = loss;
      result.clamped += obj.clamped;
    }
    adam.step();
    row.probe_acc = probe.maybe_probe(it + 1, model);
    if (config.record_wallclock) row.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(row);
  }
  result.iterations = sched.total;
  if (result.clamped) {
    std::cerr << "warning: " << result.clamped << " critic scores clamped at " << kExpClamp << " before exp\n";
  }
  return result;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write metrics to '" + path + "'");
  f << "iteration,bound,loss,probe_acc,wallclock_s\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,", r.iteration, r.bound, r.loss);
    f << buf;
    if (r.probe_acc) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.probe_acc);
      f << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.3f\n", r.wallclock_s);
    f << buf;
  }
}

}  // namespace structssl::training
