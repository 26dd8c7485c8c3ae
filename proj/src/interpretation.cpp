#include "structssl/interpretation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "structssl/ops.hpp"
#include "structssl/optim.hpp"
#include "structssl/rng.hpp"

namespace structssl::interpretation {

namespace {

double sigmoid(double v) {
  return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

MaskParams MaskParams::init(std::size_t images, std::size_t rows, std::size_t height, std::size_t width, double value) {
  MaskParams m;
  m.images = images;
  m.rows = rows;
  m.height = height;
  m.width = width;
  m.phi = Tensor::full({images, rows, height, width}, value, true);
  return m;
}

std::vector<double> MaskParams::mask(std::size_t image, std::size_t row) const {
  if (image >= images || row >= rows) throw std::out_of_range("mask index out of range");
  auto v = phi.values().subspan((image * rows + row) * plane(), plane());
  std::vector<double> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), sigmoid);
  return out;
}

double MaskParams::mean_mask() const {
  double s = 0.0;
  for (double v : phi.values()) s += sigmoid(v);
  return s / static_cast<double>(phi.numel());
}

models::Model frozen(const models::Model& model) {
  models::Model f = model.clone();
  for (auto& t : f.parameters()) t.set_requires_grad(false);
  return f;
}

Tensor mask_loss(const models::Model& model, std::span<const double> image_hwc, const Tensor& target,
                 const Tensor& phi, std::size_t row) {
  const auto& c = model.config;
  if (phi.shape() != Shape{c.height, c.width}) {
    throw ShapeError("mask_loss: mask is " + shape_str(phi.shape()) + " but the image plane is " +
                     shape_str({c.height, c.width}));
  }
  if (target.numel() != c.D) throw ShapeError("mask_loss: target must have D=" + std::to_string(c.D) + " entries");
  if (row >= c.S) throw std::out_of_range("mask_loss: row " + std::to_string(row) + " >= S");
  Tensor x = models::images_to_nchw(image_hwc, 1, c.height, c.width, c.channels);
  Tensor m = ops::reshape(ops::sigmoid(phi), {1, 1, c.height, c.width});
  Tensor z = ops::reshape(models::encode_batch(model.theta, ops::mul(m, x)), {c.S, c.D});
  Tensor zi = ops::reshape(ops::narrow(z, 0, row, 1), {c.D});
  Tensor diff = ops::sub(ops::reshape(target, {c.D}), zi);
  return ops::sum(ops::mul(diff, diff));
}

MaskResult learn_masks(const models::Model& model, const data::Dataset& images, const MaskConfig& config) {
  if (config.iterations == 0) throw std::invalid_argument("learn_masks: iterations must be >= 1");
  if (images.size() == 0) throw std::invalid_argument("learn_masks: no images");
  const auto& c = model.config;
  if (images.height != c.height || images.width != c.width || images.channels != c.channels) {
    throw ShapeError("learn_masks: images do not match the encoder input shape");
  }
  const std::size_t N = images.size(), S = c.S, D = c.D, H = c.height, W = c.width, C = c.channels;
  const models::Model enc = frozen(model);
  Tensor x = models::images_to_nchw(images.images, N, H, W, C);

  MaskResult result;
  {
    NoGradScope no_grad;
    result.targets = ops::reshape(models::encode_batch(enc.theta, x), {N, S, D});
  }
  result.masks = MaskParams::init(N, S, H, W);
  Tensor& phi = result.masks.phi;
  Tensor x5 = ops::reshape(x, {N, 1, C, H, W});
  const auto tv = result.targets.values();

  // Row i of the encoding of mask (n, i) sits at ((n*S + i)*S + i) of the [N*S*S, D] view.
  std::vector<std::size_t> own_rows(N * S);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < S; ++i) own_rows[n * S + i] = (n * S + i) * S + i;

  AdamState state(phi.numel(), AdamHyper{config.learning_rate});
  Rng rng(mix_seed(config.seed, 0x3A5C));
  result.loss_trace.reserve(config.iterations);
  std::vector<double> target(N * S * D);

  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::vector<std::size_t> pick(N);
    if (config.pairing == Pairing::Product && N > 1) {
      pick = rng.permutation(N);
    } else {
      for (std::size_t n = 0; n < N; ++n) pick[n] = n;
    }
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < S; ++i)
        std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>((pick[n] * S + i) * D), D,
                    target.begin() + static_cast<std::ptrdiff_t>((n * S + i) * D));

    std::vector<double> grad;
    double loss_value = 0.0;
    {
      Tape tape;
      TapeScope scope(tape);
      Tensor m = ops::reshape(ops::sigmoid(phi), {N, S, 1, H, W});
      Tensor masked = ops::reshape(ops::mul(m, x5), {N * S, C, H, W});
      Tensor z = ops::reshape(models::encode_batch(enc.theta, masked), {N * S * S, D});
      Tensor rows = ops::index_select(z, own_rows);
      Tensor diff = ops::sub(Tensor({N * S, D}, target), rows);
      Tensor loss = ops::sum(ops::mul(diff, diff));
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        std::ostringstream os;
        os << "learn_masks: non-finite loss " << loss_value << " at iteration " << it << ", mean mask "
           << result.masks.mean_mask();
        throw InterpretationError(os.str());
      }
      tape.backward(loss);
      grad = phi.grad();
    }
    phi.clear_grad();
    adam_step(phi, grad, state);
    result.loss_trace.push_back(loss_value);
  }
  return result;
}

double mass_in_box(std::span<const double> mask, std::size_t width, const data::BBox& box) {
  double inside = 0.0, total = 0.0;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    const std::size_t y = p / width, xx = p % width;
    total += mask[p];
    if (xx >= box.x0 && xx < box.x1 && y >= box.y0 && y < box.y1) inside += mask[p];
  }
  return total > 0.0 ? inside / total : 0.0;
}

Localization localization(const MaskParams& masks, const data::Dataset& images, double threshold) {
  if (masks.images != images.size()) throw std::invalid_argument("localization: masks and images not aligned");
  Localization out;
  std::size_t hits = 0;
  for (std::size_t n = 0; n < masks.images; ++n) {
    double best = 0.0;
    for (std::size_t i = 0; i < masks.rows; ++i) {
      const auto m = masks.mask(n, i);
      for (const auto& box : images.boxes.at(n)) best = std::max(best, mass_in_box(m, masks.width, box));
    }
    out.best_fraction.push_back(best);
    if (best >= threshold) ++hits;
  }
  out.localized_share = masks.images ? static_cast<double>(hits) / static_cast<double>(masks.images) : 0.0;
  out.mean_mask = masks.mean_mask();
  return out;
}

RgbImage mask_grid(const MaskParams& masks, const data::Dataset& images) {
  if (masks.images != images.size() || masks.height != images.height || masks.width != images.width) {
    throw std::invalid_argument("mask_grid: masks and images not aligned");
  }
  const std::size_t H = masks.height, W = masks.width, C = images.channels, cols = masks.rows + 1;
  RgbImage g;
  g.width = cols * W;
  g.height = masks.images * H;
  g.pixels.assign(g.width * g.height * 3, 0);
  auto put = [&](std::size_t tile_row, std::size_t tile_col, std::size_t y, std::size_t x, double r, double gr, double b) {
    const std::size_t o = ((tile_row * H + y) * g.width + tile_col * W + x) * 3;
    g.pixels[o] = to_byte(r);
    g.pixels[o + 1] = to_byte(gr);
    g.pixels[o + 2] = to_byte(b);
  };
  for (std::size_t n = 0; n < masks.images; ++n) {
    const auto img = images.image(n);
    std::vector<double> gray(H * W);
    for (std::size_t p = 0; p < H * W; ++p) {
      const double* px = &img[p * C];
      gray[p] = C >= 3 ? 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2] : px[0];
      if (C >= 3) {
        put(n, 0, p / W, p % W, px[0], px[1], px[2]);
      } else {
        put(n, 0, p / W, p % W, px[0], px[0], px[0]);
      }
    }
    for (std::size_t i = 0; i < masks.rows; ++i) {
      const auto m = masks.mask(n, i);
      for (std::size_t p = 0; p < H * W; ++p) {
        const double a = m[p], v = gray[p];
        put(n, i + 1, p / W, p % W, a * v + (1 - a) * 0.6, a * v, a * v);
      }
    }
  }
  return g;
}

void write_ppm(const RgbImage& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write image to '" + path + "'");
  f << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

RgbImage read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::string magic;
  std::size_t maxval = 0;
  RgbImage img;
  f >> magic >> img.width >> img.height >> maxval;
  if (magic != "P6" || maxval != 255 || !f) throw std::runtime_error("'" + path + "' is not an 8-bit binary PPM");
  f.get();
  img.pixels.resize(img.width * img.height * 3);
  f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw std::runtime_error("'" + path + "' is truncated");
  return img;
}

void render_mask_grid(const MaskParams& masks, const data::Dataset& images, const std::string& path) {
  write_ppm(mask_grid(masks, images), path);
}

void write_loss_trace_csv(const std::string& path, const std::vector<double>& trace) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write loss trace to '" + path + "'");
  f << "iteration,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, trace[i]);
    f << buf;
  }
}

}  // namespace structssl::interpretation
