#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "structssl/data.hpp"
#include "structssl/models.hpp"
#include "structssl/optim.hpp"
#include "structssl/rng.hpp"

namespace structssl::evaluation {

struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major
};

// Row i = flatten(g_theta(x_i)). Runs without a tape; the encoder is untouched.
FeatureMatrix extract_features(const models::Model& model, const data::Dataset& ds, std::size_t chunk = 256);

struct ProbeResult {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::size_t> class_counts;
  std::size_t epochs = 0;
  std::size_t feature_dim = 0;
  std::string checkpoint_id;
};

struct ProbeConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

// Softmax regression on frozen features, trained with Adam. Inputs are
// standardized with statistics of the features passed to each train call.
class LinearProbe {
 public:
  LinearProbe(std::size_t feature_dim, std::size_t num_classes, const ProbeConfig& config);

  // One pass over shuffled minibatches; returns accuracy on the passed data afterwards.
  double train_epoch(const FeatureMatrix& features, const std::vector<int>& labels, Rng& rng);
  std::vector<int> predict(const FeatureMatrix& features) const;
  std::size_t num_classes() const { return num_classes_; }

 private:
  void fit_standardizer(const FeatureMatrix& features);
  std::vector<double> standardized(const FeatureMatrix& f, std::size_t row_begin, std::size_t rows) const;
  std::vector<double> standardized_rows(const FeatureMatrix& f, const std::vector<std::size_t>& rows) const;

  std::size_t dim_;
  std::size_t num_classes_;
  ProbeConfig config_;
  Tensor weight_;  // [dim, classes]
  Tensor bias_;    // [classes]
  AdamState weight_state_;
  AdamState bias_state_;
  std::vector<double> mean_, inv_std_;
};

// Accuracy bookkeeping: accuracy is the count-weighted mean of per-class accuracies.
ProbeResult score(const std::vector<int>& predicted, const std::vector<int>& labels, std::size_t num_classes);

// Trains on (train_features, train_labels) and reports accuracy on the test set.
ProbeResult linear_probe(const FeatureMatrix& train_features, const std::vector<int>& train_labels,
                         const FeatureMatrix& test_features, const std::vector<int>& test_labels,
                         std::size_t num_classes, const ProbeConfig& config);

// Deterministic 80/20 split by seeded shuffle, then linear_probe.
ProbeResult linear_probe(const FeatureMatrix& features, const std::vector<int>& labels, std::size_t num_classes,
                         const ProbeConfig& config);

// Warm-started probe trained for one epoch every `interval` iterations on the
// current frozen features; reports training accuracy.
class PeriodicProbe {
 public:
  // interval == 0 disables probing.
  PeriodicProbe(const data::Dataset& probe_set, std::size_t interval, std::uint64_t seed, double learning_rate = 1e-3);

  std::optional<double> maybe_probe(std::size_t iteration, const models::Model& model);
  bool enabled() const { return interval_ > 0 && probe_set_.size() > 0; }

 private:
  const data::Dataset& probe_set_;
  std::size_t interval_;
  Rng rng_;
  std::optional<LinearProbe> probe_;
  ProbeConfig config_;
};

std::string probe_csv_header();
std::string probe_csv_row(const ProbeResult& r);
std::string probe_summary(const ProbeResult& r);

}  // namespace structssl::evaluation
