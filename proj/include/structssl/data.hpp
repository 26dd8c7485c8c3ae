#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace structssl::data {

// Half-open pixel box [x0, x1) x [y0, y1).
struct BBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool intersects(const BBox& o, std::size_t margin = 0) const;
  std::size_t area() const { return (x1 - x0) * (y1 - y0); }
};

struct Dataset {
  std::string name;
  std::string split;
  std::size_t height = 0, width = 0, channels = 0;
  std::size_t num_classes = 0;
  std::vector<double> images;  // N x H x W x C, values in [0, 1]
  std::vector<int> labels;
  std::vector<std::vector<BBox>> boxes;  // per image; empty for natural images

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return height * width * channels; }
  std::span<const double> image(std::size_t i) const;
  Dataset subset(const std::vector<std::size_t>& indices) const;
  // Throws std::runtime_error when an invariant is violated.
  void validate() const;
};

enum class ShapeKind { Square, Circle, Triangle };

struct ShapesSpec {
  std::size_t image_size = 32;
  std::size_t objects = 2;
  std::size_t size_min = 10;
  std::size_t size_max = 14;
  std::vector<std::array<double, 3>> palette{
      {0.95, 0.20, 0.20}, {0.20, 0.85, 0.25}, {0.25, 0.35, 0.95},
      {0.95, 0.85, 0.15}, {0.85, 0.25, 0.90}, {0.15, 0.85, 0.90}};
  // Per-image background gray level drawn from [background_min, background_max],
  // plus per-pixel uniform noise of +-background_noise.
  double background_min = 0.05;
  double background_max = 0.45;
  double background_noise = 0.05;
  std::uint64_t seed = 0;
};

// Label for an unordered pair of shape kinds: 0..2 for identical kinds, 3..5 otherwise.
int shape_pair_class(ShapeKind a, ShapeKind b);
inline constexpr std::size_t kShapeClasses = 6;

// Synthetic images with `objects` non-overlapping shapes; bounding boxes kept per image.
Dataset synth_shapes(const ShapesSpec& spec, std::size_t n);

inline constexpr std::size_t kCifarRecordBytes = 3073;

Dataset parse_cifar10(const std::string& bytes, const std::string& name = "cifar10");
Dataset load_cifar10_file(const std::string& path);
// split "train" reads data_batch_*.bin, "test" reads test_batch.bin.
Dataset load_cifar10(const std::string& dir, const std::string& split = "train");
// Serializes 32x32x3 images in the CIFAR-10 binary record format (pixels rounded to bytes).
std::string encode_cifar10(const Dataset& ds);

}  // namespace structssl::data
