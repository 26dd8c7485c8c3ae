#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "structssl/data.hpp"
#include "structssl/models.hpp"
#include "structssl/tensor.hpp"

namespace structssl::interpretation {

// Per-image, per-row mask logits; the mask itself is sigmoid(phi).
struct MaskParams {
  std::size_t images = 0, rows = 0, height = 0, width = 0;
  Tensor phi;  // [images, rows, H, W]

  static MaskParams init(std::size_t images, std::size_t rows, std::size_t height, std::size_t width, double value = 0.0);
  std::size_t plane() const { return height * width; }
  // sigmoid(phi) for (image, row), H*W values.
  std::vector<double> mask(std::size_t image, std::size_t row) const;
  double mean_mask() const;
};

// Copy of the model with every parameter detached from gradient tracking.
models::Model frozen(const models::Model& model);

// ||target - row_i(g(sigmoid(phi) * x))||^2 with phi of shape [H, W].
Tensor mask_loss(const models::Model& model, std::span<const double> image_hwc, const Tensor& target,
                 const Tensor& phi, std::size_t row);

enum class Pairing {
  Product,   // targets drawn from the batch latent pool by a fresh permutation each iteration
  OwnImage,  // each image is paired with its own latent rows
};

struct MaskConfig {
  std::size_t iterations = 2000;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
  Pairing pairing = Pairing::Product;
};

class InterpretationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MaskResult {
  MaskParams masks;
  std::vector<double> loss_trace;  // summed loss per iteration
  Tensor targets;                  // [images, S, D] latents of the unmasked images
};

MaskResult learn_masks(const models::Model& model, const data::Dataset& images, const MaskConfig& config);

// Share of a mask's total mass falling inside the box.
double mass_in_box(std::span<const double> mask, std::size_t width, const data::BBox& box);

struct Localization {
  std::vector<double> best_fraction;  // per image: max over rows and boxes
  double localized_share = 0.0;       // images with best_fraction >= threshold
  double mean_mask = 0.0;
};

Localization localization(const MaskParams& masks, const data::Dataset& images, double threshold = 0.6);

// 8-bit RGB raster.
struct RgbImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB
  bool operator==(const RgbImage&) const = default;
};

// One row per image: the original, then one overlay per latent row
// (mask as alpha over the grayscale image against a red tint).
RgbImage mask_grid(const MaskParams& masks, const data::Dataset& images);
void write_ppm(const RgbImage& img, const std::string& path);
RgbImage read_ppm(const std::string& path);
void render_mask_grid(const MaskParams& masks, const data::Dataset& images, const std::string& path);

void write_loss_trace_csv(const std::string& path, const std::vector<double>& trace);

}  // namespace structssl::interpretation
