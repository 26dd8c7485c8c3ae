#include "structssl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>

#include "structssl/ops.hpp"

namespace structssl::evaluation {

FeatureMatrix extract_features(const models::Model& model, const data::Dataset& ds, std::size_t chunk) {
  const auto& c = model.config;
  if (ds.height != c.height || ds.width != c.width || ds.channels != c.channels) {
    throw ShapeError("extract_features: dataset images are " + std::to_string(ds.height) + "x" + std::to_string(ds.width) +
                     "x" + std::to_string(ds.channels) + ", encoder expects " + std::to_string(c.height) + "x" +
                     std::to_string(c.width) + "x" + std::to_string(c.channels));
  }
  FeatureMatrix out;
  out.rows = ds.size();
  out.cols = c.latent_width();
  out.values.reserve(out.rows * out.cols);
  NoGradScope no_grad;
  for (std::size_t begin = 0; begin < ds.size(); begin += chunk) {
    const std::size_t n = std::min(chunk, ds.size() - begin);
    auto pixels = std::span<const double>(ds.images).subspan(begin * ds.image_size(), n * ds.image_size());
    Tensor z = models::encode_batch(model.theta, models::images_to_nchw(pixels, n, ds.height, ds.width, ds.channels));
    out.values.insert(out.values.end(), z.values().begin(), z.values().end());
  }
  return out;
}

LinearProbe::LinearProbe(std::size_t feature_dim, std::size_t num_classes, const ProbeConfig& config)
    : dim_(feature_dim),
      num_classes_(num_classes),
      config_(config),
      weight_(Tensor::zeros({feature_dim, num_classes}, true)),
      bias_(Tensor::zeros({num_classes}, true)),
      weight_state_(feature_dim * num_classes, AdamHyper{config.learning_rate}),
      bias_state_(num_classes, AdamHyper{config.learning_rate}) {
  if (feature_dim == 0 || num_classes < 2) throw std::invalid_argument("linear probe needs features and >= 2 classes");
  Rng rng(mix_seed(config.seed, 0x9B0B));
  const double bound = std::sqrt(1.0 / static_cast<double>(feature_dim));
  for (auto& w : weight_.mutable_values()) w = rng.uniform(-bound, bound);
}

void LinearProbe::fit_standardizer(const FeatureMatrix& f) {
  mean_.assign(dim_, 0.0);
  inv_std_.assign(dim_, 0.0);
  for (std::size_t r = 0; r < f.rows; ++r)
    for (std::size_t j = 0; j < dim_; ++j) mean_[j] += f.values[r * dim_ + j];
  for (auto& m : mean_) m /= static_cast<double>(f.rows);
  std::vector<double> var(dim_, 0.0);
  for (std::size_t r = 0; r < f.rows; ++r)
    for (std::size_t j = 0; j < dim_; ++j) {
      const double d = f.values[r * dim_ + j] - mean_[j];
      var[j] += d * d;
    }
  for (std::size_t j = 0; j < dim_; ++j) {
    const double sd = std::sqrt(var[j] / static_cast<double>(f.rows));
    inv_std_[j] = sd > 1e-12 ? 1.0 / sd : 0.0;
  }
}

std::vector<double> LinearProbe::standardized(const FeatureMatrix& f, std::size_t row_begin, std::size_t rows) const {
  std::vector<double> out(rows * dim_);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < dim_; ++j)
      out[r * dim_ + j] = (f.values[(row_begin + r) * dim_ + j] - mean_[j]) * inv_std_[j];
  return out;
}

std::vector<double> LinearProbe::standardized_rows(const FeatureMatrix& f, const std::vector<std::size_t>& rows) const {
  std::vector<double> out(rows.size() * dim_);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t j = 0; j < dim_; ++j) out[r * dim_ + j] = (f.values[rows[r] * dim_ + j] - mean_[j]) * inv_std_[j];
  return out;
}

double LinearProbe::train_epoch(const FeatureMatrix& features, const std::vector<int>& labels, Rng& rng) {
  if (features.cols != dim_ || features.rows != labels.size() || features.rows == 0) {
    throw ShapeError("linear probe: feature matrix does not match labels or probe width");
  }
  fit_standardizer(features);
  auto order = rng.permutation(features.rows);
  for (std::size_t begin = 0; begin < order.size(); begin += config_.batch_size) {
    const std::size_t b = std::min(config_.batch_size, order.size() - begin);
    std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                  order.begin() + static_cast<std::ptrdiff_t>(begin + b));
    std::vector<double> onehot(b * num_classes_, 0.0);
    for (std::size_t r = 0; r < b; ++r) onehot[r * num_classes_ + static_cast<std::size_t>(labels[rows[r]])] = 1.0;
    {
      Tape tape;
      TapeScope scope(tape);
      Tensor x({b, dim_}, standardized_rows(features, rows));
      Tensor logits = ops::add(ops::matmul(x, weight_), bias_);
      Tensor picked = ops::sum_last(ops::mul(logits, Tensor({b, num_classes_}, std::move(onehot))));
      Tensor loss = ops::mean(ops::sub(ops::logsumexp(logits), picked));
      tape.backward(loss);
    }
    adam_step(weight_, weight_.grad(), weight_state_);
    adam_step(bias_, bias_.grad(), bias_state_);
  }
  auto pred = predict(features);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

std::vector<int> LinearProbe::predict(const FeatureMatrix& features) const {
  if (features.cols != dim_) throw ShapeError("linear probe: feature width mismatch");
  if (mean_.empty()) throw std::logic_error("linear probe: predict before training");
  std::vector<int> out(features.rows);
  auto w = weight_.values();
  auto bias = bias_.values();
  const auto x = standardized(features, 0, features.rows);
  std::vector<double> logit(num_classes_);
  for (std::size_t r = 0; r < features.rows; ++r) {
    for (std::size_t k = 0; k < num_classes_; ++k) logit[k] = bias[k];
    for (std::size_t j = 0; j < dim_; ++j) {
      const double xv = x[r * dim_ + j];
      for (std::size_t k = 0; k < num_classes_; ++k) logit[k] += xv * w[j * num_classes_ + k];
    }
    out[r] = static_cast<int>(std::max_element(logit.begin(), logit.end()) - logit.begin());
  }
  return out;
}

ProbeResult score(const std::vector<int>& predicted, const std::vector<int>& labels, std::size_t num_classes) {
  if (predicted.size() != labels.size() || labels.empty()) throw std::invalid_argument("score: prediction/label size mismatch");
  ProbeResult r;
  r.class_counts.assign(num_classes, 0);
  std::vector<std::size_t> hits(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto l = static_cast<std::size_t>(labels[i]);
    ++r.class_counts[l];
    hits[l] += predicted[i] == labels[i];
  }
  r.per_class_accuracy.assign(num_classes, 0.0);
  double weighted = 0.0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (r.class_counts[k]) r.per_class_accuracy[k] = static_cast<double>(hits[k]) / static_cast<double>(r.class_counts[k]);
    weighted += r.per_class_accuracy[k] * static_cast<double>(r.class_counts[k]);
  }
  r.accuracy = weighted / static_cast<double>(labels.size());
  return r;
}

namespace {

void check_labels(const std::vector<int>& labels, std::size_t num_classes) {
  std::set<int> distinct;
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw std::invalid_argument("linear probe: label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    distinct.insert(l);
  }
  if (distinct.size() < 2) throw std::invalid_argument("linear probe: training labels contain a single class");
}

void check_finite(const FeatureMatrix& f) {
  for (double v : f.values)
    if (!std::isfinite(v)) throw std::invalid_argument("linear probe: non-finite feature");
}

}  // namespace

ProbeResult linear_probe(const FeatureMatrix& train_features, const std::vector<int>& train_labels,
                         const FeatureMatrix& test_features, const std::vector<int>& test_labels, std::size_t num_classes,
                         const ProbeConfig& config) {
  check_labels(train_labels, num_classes);
  check_finite(train_features);
  check_finite(test_features);
  LinearProbe probe(train_features.cols, num_classes, config);
  Rng rng(mix_seed(config.seed, 0x7E57));
  for (std::size_t e = 0; e < config.epochs; ++e) probe.train_epoch(train_features, train_labels, rng);
  ProbeResult r = score(probe.predict(test_features), test_labels, num_classes);
  r.epochs = config.epochs;
  r.feature_dim = train_features.cols;
  return r;
}

ProbeResult linear_probe(const FeatureMatrix& features, const std::vector<int>& labels, std::size_t num_classes,
                         const ProbeConfig& config) {
  if (features.rows != labels.size() || features.rows < 5) throw std::invalid_argument("linear probe: need >= 5 labelled rows");
  Rng rng(mix_seed(config.seed, 0x5B11));
  auto order = rng.permutation(features.rows);
  const std::size_t n_train = (features.rows * 4) / 5;
  auto take = [&](std::size_t begin, std::size_t end, FeatureMatrix& f, std::vector<int>& l) {
    f.cols = features.cols;
    f.rows = end - begin;
    for (std::size_t i = begin; i < end; ++i) {
      const auto r = order[i];
      f.values.insert(f.values.end(), features.values.begin() + static_cast<std::ptrdiff_t>(r * features.cols),
                      features.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * features.cols));
      l.push_back(labels[r]);
    }
  };
  FeatureMatrix tr, te;
  std::vector<int> ltr, lte;
  take(0, n_train, tr, ltr);
  take(n_train, features.rows, te, lte);
  return linear_probe(tr, ltr, te, lte, num_classes, config);
}

PeriodicProbe::PeriodicProbe(const data::Dataset& probe_set, std::size_t interval, std::uint64_t seed, double learning_rate)
    : probe_set_(probe_set), interval_(interval), rng_(mix_seed(seed, 0x9E71)) {
  config_.seed = seed;
  config_.learning_rate = learning_rate;
}

std::optional<double> PeriodicProbe::maybe_probe(std::size_t iteration, const models::Model& model) {
  if (!enabled() || iteration == 0 || iteration % interval_ != 0) return std::nullopt;
  FeatureMatrix f = extract_features(model, probe_set_);
  if (!probe_) probe_.emplace(f.cols, probe_set_.num_classes, config_);
  return probe_->train_epoch(f, probe_set_.labels, rng_);
}

std::string probe_csv_header() { return "checkpoint,accuracy,epochs,feature_dim,per_class_accuracy"; }

std::string probe_csv_row(const ProbeResult& r) {
  std::ostringstream os;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", r.accuracy);
  os << r.checkpoint_id << ',' << buf << ',' << r.epochs << ',' << r.feature_dim << ',';
  for (std::size_t k = 0; k < r.per_class_accuracy.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.4f", r.per_class_accuracy[k]);
    os << (k ? ";" : "") << buf;
  }
  return os.str();
}

std::string probe_summary(const ProbeResult& r) {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * r.accuracy);
  os << "linear probe accuracy " << buf << " (" << r.epochs << " epochs, " << r.feature_dim << "-d features)\n";
  for (std::size_t k = 0; k < r.per_class_accuracy.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * r.per_class_accuracy[k]);
    os << "  class " << k << ": " << buf << " of " << r.class_counts[k] << "\n";
  }
  return os.str();
}

}  // namespace structssl::evaluation
