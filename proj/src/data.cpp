#include "structssl/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "structssl/rng.hpp"

namespace structssl::data {

bool BBox::intersects(const BBox& o, std::size_t margin) const {
  return x0 < o.x1 + margin && o.x0 < x1 + margin && y0 < o.y1 + margin && o.y0 < y1 + margin;
}

std::span<const double> Dataset::image(std::size_t i) const {
  if (i >= size()) throw std::out_of_range("image index " + std::to_string(i) + " >= " + std::to_string(size()));
  return std::span<const double>(images).subspan(i * image_size(), image_size());
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.name = name;
  out.split = split;
  out.height = height;
  out.width = width;
  out.channels = channels;
  out.num_classes = num_classes;
  out.images.reserve(indices.size() * image_size());
  for (auto i : indices) {
    auto img = image(i);
    out.images.insert(out.images.end(), img.begin(), img.end());
    out.labels.push_back(labels[i]);
    if (!boxes.empty()) out.boxes.push_back(boxes[i]);
  }
  return out;
}

void Dataset::validate() const {
  if (images.size() != labels.size() * image_size()) {
    throw std::runtime_error("dataset '" + name + "': " + std::to_string(images.size()) + " pixel values for " +
                             std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw std::runtime_error("dataset '" + name + "': label " + std::to_string(l) + " outside [0, " +
                               std::to_string(num_classes) + ")");
    }
  }
  for (double v : images) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::runtime_error("dataset '" + name + "': pixel outside [0, 1]");
  }
  if (!boxes.empty() && boxes.size() != labels.size()) throw std::runtime_error("dataset '" + name + "': box count mismatch");
}

int shape_pair_class(ShapeKind a, ShapeKind b) {
  int x = static_cast<int>(a), y = static_cast<int>(b);
  if (x > y) std::swap(x, y);
  if (x == y) return x;
  // (0,1) -> 3, (0,2) -> 4, (1,2) -> 5
  return 2 + x + y;
}

namespace {

bool inside(ShapeKind kind, double u, double v) {
  // (u, v) in [0,1]^2 relative to the bounding box, v pointing down.
  switch (kind) {
    case ShapeKind::Square: return true;
    case ShapeKind::Circle: return (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5) <= 0.25;
    case ShapeKind::Triangle: return std::abs(u - 0.5) <= 0.5 * v;
  }
  return false;
}

}  // namespace

Dataset synth_shapes(const ShapesSpec& spec, std::size_t n) {
  if (n == 0) throw std::invalid_argument("synth_shapes: need at least one image");
  if (spec.objects == 0 || spec.size_min == 0 || spec.size_min > spec.size_max || spec.size_max > spec.image_size) {
    throw std::invalid_argument("synth_shapes: invalid object count or size range");
  }
  if (spec.objects != 2) throw std::invalid_argument("synth_shapes: the shape-pair class rule needs exactly 2 objects");
  if (spec.palette.empty()) throw std::invalid_argument("synth_shapes: empty palette");
  const std::size_t S = spec.image_size;
  Dataset ds;
  ds.name = "synth-shapes";
  ds.split = "seed" + std::to_string(spec.seed);
  ds.height = ds.width = S;
  ds.channels = 3;
  ds.num_classes = kShapeClasses;
  ds.images.assign(n * S * S * 3, 0.0);
  ds.labels.resize(n);
  ds.boxes.resize(n);

  // Unordered kind pairs for each class id.
  constexpr std::array<std::array<ShapeKind, 2>, kShapeClasses> pairs{{
      {ShapeKind::Square, ShapeKind::Square},
      {ShapeKind::Circle, ShapeKind::Circle},
      {ShapeKind::Triangle, ShapeKind::Triangle},
      {ShapeKind::Square, ShapeKind::Circle},
      {ShapeKind::Square, ShapeKind::Triangle},
      {ShapeKind::Circle, ShapeKind::Triangle},
  }};

  // Classes come in shuffled blocks of kShapeClasses, so every prefix is balanced to within one block.
  std::vector<std::size_t> block;
  for (std::size_t idx = 0; idx < n; ++idx) {
    if (idx % kShapeClasses == 0) {
      Rng block_rng(mix_seed(spec.seed, idx / kShapeClasses, 0xB10C));
      block = block_rng.permutation(kShapeClasses);
    }
    Rng rng(mix_seed(spec.seed, idx, 0x5A9E));
    const auto cls = block[idx % kShapeClasses];
    auto kinds = pairs[cls];
    if (rng.bernoulli(0.5)) std::swap(kinds[0], kinds[1]);
    ds.labels[idx] = static_cast<int>(cls);

    double* img = ds.images.data() + idx * S * S * 3;
    const double bg = rng.uniform(spec.background_min, spec.background_max);
    for (std::size_t p = 0; p < S * S; ++p) {
      const double level = std::clamp(bg + rng.uniform(-spec.background_noise, spec.background_noise), 0.0, 1.0);
      for (int c = 0; c < 3; ++c) img[p * 3 + c] = level;
    }

    // Each attempt redraws the whole layout, so an early box cannot block the rest.
    std::vector<BBox> placed;
    bool ok = false;
    for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
      placed.clear();
      ok = true;
      for (std::size_t o = 0; o < spec.objects && ok; ++o) {
        const std::size_t size = spec.size_min + rng.below(spec.size_max - spec.size_min + 1);
        BBox box;
        box.x0 = rng.below(S - size + 1);
        box.y0 = rng.below(S - size + 1);
        box.x1 = box.x0 + size;
        box.y1 = box.y0 + size;
        ok = std::none_of(placed.begin(), placed.end(), [&](const BBox& b) { return b.intersects(box, 1); });
        placed.push_back(box);
      }
    }
    if (!ok) throw std::runtime_error("synth_shapes: placement failed after 1000 attempts; image too small for size range");
    for (std::size_t o = 0; o < spec.objects; ++o) {
      const BBox& box = placed[o];
      const auto& color = spec.palette[rng.below(spec.palette.size())];
      const double w = static_cast<double>(box.x1 - box.x0);
      for (std::size_t y = box.y0; y < box.y1; ++y) {
        for (std::size_t x = box.x0; x < box.x1; ++x) {
          const double u = (static_cast<double>(x - box.x0) + 0.5) / w;
          const double v = (static_cast<double>(y - box.y0) + 0.5) / w;
          if (!inside(kinds[o], u, v)) continue;
          for (int c = 0; c < 3; ++c) img[(y * S + x) * 3 + c] = color[c];
        }
      }
    }
    ds.boxes[idx] = placed;
  }
  return ds;
}

Dataset parse_cifar10(const std::string& bytes, const std::string& name) {
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw std::runtime_error("cifar10 '" + name + "': size " + std::to_string(bytes.size()) + " is not a positive multiple of " +
                             std::to_string(kCifarRecordBytes));
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  Dataset ds;
  ds.name = name;
  ds.split = name;
  ds.height = ds.width = 32;
  ds.channels = 3;
  ds.num_classes = 10;
  ds.images.resize(n * 32 * 32 * 3);
  ds.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data()) + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw std::runtime_error("cifar10 '" + name + "': record " + std::to_string(r) + " has label byte " + std::to_string(rec[0]));
    }
    ds.labels[r] = rec[0];
    double* img = ds.images.data() + r * 3072;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 1024; ++p) img[p * 3 + c] = static_cast<double>(rec[1 + c * 1024 + p]) / 255.0;
  }
  return ds;
}

Dataset load_cifar10_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_cifar10(ss.str(), std::filesystem::path(path).filename().string());
}

Dataset load_cifar10(const std::string& dir, const std::string& split) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("cifar10: '" + dir + "' is not a directory");
  std::vector<fs::path> files;
  if (split == "train") {
    for (int b = 1; b <= 5; ++b) {
      fs::path p = fs::path(dir) / ("data_batch_" + std::to_string(b) + ".bin");
      if (!fs::exists(p)) throw std::runtime_error("cifar10: missing " + p.string());
      files.push_back(p);
    }
  } else if (split == "test") {
    fs::path p = fs::path(dir) / "test_batch.bin";
    if (!fs::exists(p)) throw std::runtime_error("cifar10: missing " + p.string());
    files.push_back(p);
  } else {
    throw std::invalid_argument("cifar10: split must be 'train' or 'test', got '" + split + "'");
  }
  Dataset out;
  for (const auto& p : files) {
    Dataset part = load_cifar10_file(p.string());
    if (out.labels.empty()) {
      out = std::move(part);
    } else {
      out.images.insert(out.images.end(), part.images.begin(), part.images.end());
      out.labels.insert(out.labels.end(), part.labels.begin(), part.labels.end());
    }
  }
  out.name = "cifar10";
  out.split = split;
  return out;
}

std::string encode_cifar10(const Dataset& ds) {
  if (ds.height != 32 || ds.width != 32 || ds.channels != 3) throw std::invalid_argument("encode_cifar10: images must be 32x32x3");
  std::string out(ds.size() * kCifarRecordBytes, '\0');
  for (std::size_t r = 0; r < ds.size(); ++r) {
    if (ds.labels[r] < 0 || ds.labels[r] > 9) throw std::invalid_argument("encode_cifar10: label outside [0, 9]");
    auto* rec = reinterpret_cast<unsigned char*>(out.data()) + r * kCifarRecordBytes;
    rec[0] = static_cast<unsigned char>(ds.labels[r]);
    auto img = ds.image(r);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 1024; ++p)
        rec[1 + c * 1024 + p] = static_cast<unsigned char>(std::lround(std::clamp(img[p * 3 + c], 0.0, 1.0) * 255.0));
  }
  return out;
}

}  // namespace structssl::data
