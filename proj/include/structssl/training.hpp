#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "structssl/data.hpp"
#include "structssl/models.hpp"
#include "structssl/rng.hpp"
#include "structssl/tensor.hpp"

namespace structssl::training {

// Which mutual-information terms the objective keeps: I(X,Z), I(X,A), or both.
enum class Variant { Z, A, ZA };

Variant parse_variant(const std::string& s);
std::string to_string(Variant v);

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  std::size_t augmentations = 32;
  double learning_rate = 1e-3;
  std::size_t S = 8;
  std::size_t D = 8;
  std::size_t K = 2;
  Variant variant = Variant::ZA;
  std::uint64_t seed = 0;
  std::size_t probe_interval = 100;  // 0 disables the periodic probe
  std::string dataset = "synth";     // "synth" or a CIFAR-10 binary directory

  // 0 runs epochs x (dataset size / batch size) iterations; otherwise stops here.
  std::size_t iterations = 0;
  std::size_t train_size = 6000;  // synthetic training images
  std::vector<std::size_t> conv_widths{32, 64, 128, 256};
  std::size_t hidden = 64;
  double tau = 0.5;
  std::size_t probe_samples = 1000;
  bool record_wallclock = true;
  // Prepare the next batch's augmented views on a worker thread.
  bool prefetch = false;

  models::ModelConfig model_config(std::size_t height, std::size_t width, std::size_t channels) const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// key=value lines, '#' comments. Unknown keys, malformed and out-of-range
// values raise ConfigError naming the line.
TrainConfig parse_config_text(const std::string& text, const std::string& source = "<config>");
TrainConfig parse_config(const std::string& path);

// Crop-and-resize, horizontal flip, per-channel brightness/contrast jitter.
struct AugmentDraw {
  double crop_side = 1.0;  // fraction of the image side
  double crop_x = 0.0;     // top-left corner as a fraction of the side
  double crop_y = 0.0;
  bool flip = false;
  std::array<double, 3> brightness{0.0, 0.0, 0.0};
  std::array<double, 3> contrast{1.0, 1.0, 1.0};

  static AugmentDraw identity() { return {}; }
};

AugmentDraw sample_augment(Rng& rng);
std::vector<double> apply_augment(std::span<const double> image, std::size_t h, std::size_t w, std::size_t c,
                                  const AugmentDraw& draw);
std::vector<double> augment(std::span<const double> image, std::size_t h, std::size_t w, std::size_t c, Rng& rng);

// Uniformly random permutation with no fixed points; n >= 2.
std::vector<std::size_t> derangement(std::size_t n, Rng& rng);

struct PairBatch {
  std::vector<std::size_t> indices;   // dataset index of each anchor
  std::vector<std::size_t> negative;  // derangement: anchor r is paired with view of anchor negative[r]
  Tensor anchors;                     // [B, C, H, W]
  Tensor positives;                   // [B, C, H, W], augmented anchors
  Tensor z;                           // g(x)     [B, S*D]
  Tensor z_pos;                       // g(x')    [B, S*D]
  Tensor z_neg;                       // g(x~)    [B, S*D]
  Tensor h;                           // h(x)     [B, S*S*K]
  Tensor a_pos;                       // h(x')    [B, S*S*K]
  Tensor a_neg;                       // h(x~)    [B, S*S*K]
  bool has_structure = false;
};

// Raw anchor and augmented-positive pixels for one batch.
struct BatchViews {
  std::vector<std::size_t> indices;
  std::vector<double> anchors;    // B x H x W x C
  std::vector<double> positives;  // B x H x W x C
};

BatchViews make_views(const data::Dataset& ds, const std::vector<std::size_t>& indices,
                      const std::vector<AugmentDraw>& draws);

// Encodes both views under the current parameters (recording on the active tape).
PairBatch build_pairs(const data::Dataset& ds, const BatchViews& views, const models::Model& model,
                      std::uint64_t noise_seed, Rng& rng, bool with_structure = true);

inline constexpr double kExpClamp = 40.0;

// mean(pos) - (1/e) mean(exp(min(neg, 40)))
Tensor nwj_bound(const Tensor& pos_scores, const Tensor& neg_scores, std::size_t* clamped = nullptr);

struct Objective {
  Tensor loss;  // negated bound for the chosen variant
  double bound = 0.0;
  double bound_z = 0.0;  // I(X,Z) estimate on this batch
  double bound_a = 0.0;  // I(X,A) estimate on this batch
  std::size_t clamped = 0;
};

struct CriticScores {
  Tensor z_pos, z_neg, a_pos, a_neg;  // [B] each; a_* undefined-as-zero when structure is absent
};

CriticScores critic_scores(const PairBatch& pb, const models::Model& model);
Objective nwj_objective(const PairBatch& pb, const models::Model& model, Variant variant);
// Same objective from precomputed critic scores.
Objective nwj_objective(const CriticScores& scores, Variant variant);

struct MetricRow {
  std::size_t iteration = 0;
  double bound = 0.0;
  double loss = 0.0;
  std::optional<double> probe_acc;
  double wallclock_s = 0.0;
};

struct TrainResult {
  models::Model model;
  std::vector<MetricRow> metrics;
  std::size_t iterations = 0;
  std::size_t clamped = 0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Probe set is used by the periodic linear probe; pass an empty dataset to skip it.
TrainResult train(const TrainConfig& config, const data::Dataset& train_set, const data::Dataset& probe_set);
TrainResult train(const TrainConfig& config, const data::Dataset& train_set);

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);

}  // namespace structssl::training
