#include "structssl/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <stdexcept>

#include "structssl/ops.hpp"
#include "structssl/rng.hpp"

namespace structssl::models {

namespace {

Tensor uniform_init(Shape shape, double fan_in, double gain, Rng& rng) {
  const double bound = gain * std::sqrt(3.0 / fan_in);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

Linear make_linear(std::size_t in, std::size_t out, double gain, Rng* rng) {
  Linear l;
  l.weight = rng ? uniform_init({in, out}, static_cast<double>(in), gain, *rng) : Tensor::zeros({in, out}, true);
  l.bias = Tensor::zeros({out}, true);
  return l;
}

Mlp make_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng* rng) {
  return Mlp{make_linear(in, hidden, std::sqrt(2.0), rng), make_linear(hidden, out, 1.0, rng)};
}

Model build(const ModelConfig& cfg, Rng* rng) {
  cfg.validate();
  Model m;
  m.config = cfg;
  std::size_t in_c = cfg.channels;
  for (auto out_c : cfg.conv_widths) {
    const double fan_in = static_cast<double>(in_c * 9);
    m.theta.conv_weight.push_back(rng ? uniform_init({out_c, in_c, 3, 3}, fan_in, std::sqrt(2.0), *rng)
                                      : Tensor::zeros({out_c, in_c, 3, 3}, true));
    m.theta.conv_bias.push_back(Tensor::zeros({out_c}, true));
    in_c = out_c;
  }
  m.theta.head = make_linear(in_c, cfg.latent_width(), 1.0, rng);

  const std::size_t h = cfg.hidden;
  m.eta.emb = make_mlp(cfg.D, h, h, rng);
  m.eta.edge1 = make_mlp(2 * h, h, h, rng);
  m.eta.node1 = make_mlp(h, h, h, rng);
  m.eta.edge2 = make_mlp(3 * h, h, cfg.K, rng);
  m.eta.tau = cfg.tau;

  m.critic.f = make_mlp(2 * cfg.latent_width(), h, 1, rng);
  const std::size_t p = cfg.S * cfg.S;
  m.critic.w = rng ? uniform_init({cfg.K, p, p}, static_cast<double>(cfg.K * p * p), 1.0, *rng)
                   : Tensor::zeros({cfg.K, p, p}, true);
  return m;
}

void add_mlp(NamedArrays& out, const std::string& prefix, const Mlp& mlp) {
  out.emplace_back(prefix + ".hidden.weight", mlp.hidden.weight);
  out.emplace_back(prefix + ".hidden.bias", mlp.hidden.bias);
  out.emplace_back(prefix + ".out.weight", mlp.out.weight);
  out.emplace_back(prefix + ".out.bias", mlp.out.bias);
}

Tensor arch_array(const ModelConfig& c) {
  std::vector<double> v{static_cast<double>(c.height), static_cast<double>(c.width), static_cast<double>(c.channels),
                        static_cast<double>(c.S),      static_cast<double>(c.D),     static_cast<double>(c.K),
                        static_cast<double>(c.hidden), c.tau,                        static_cast<double>(c.conv_widths.size())};
  for (auto w : c.conv_widths) v.push_back(static_cast<double>(w));
  const auto n = v.size();
  return Tensor({n}, std::move(v));
}

}  // namespace

void ModelConfig::validate() const {
  if (S < 2) throw std::invalid_argument("model: S must be >= 2");
  if (D == 0 || K < 2 || hidden == 0 || channels == 0) throw std::invalid_argument("model: D, hidden, channels must be positive and K >= 2");
  if (!(tau > 0.0)) throw std::invalid_argument("model: tau must be positive");
  if (conv_widths.empty()) throw std::invalid_argument("model: need at least one conv block");
  const std::size_t div = std::size_t{1} << conv_widths.size();
  if (height % div || width % div || height == 0 || width == 0) {
    throw std::invalid_argument("model: input " + std::to_string(height) + "x" + std::to_string(width) +
                                " not divisible by " + std::to_string(div) + " for " +
                                std::to_string(conv_widths.size()) + " pooling blocks");
  }
}

Tensor Linear::operator()(const Tensor& x) const { return ops::add(ops::matmul(x, weight), bias); }

Tensor Mlp::operator()(const Tensor& x) const { return out(ops::relu(hidden(x))); }

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5EED));
  return build(config, &rng);
}

Model Model::zeros(const ModelConfig& config) { return build(config, nullptr); }

NamedArrays Model::named_parameters() const {
  NamedArrays out;
  for (std::size_t l = 0; l < theta.conv_weight.size(); ++l) {
    out.emplace_back("theta.conv" + std::to_string(l) + ".weight", theta.conv_weight[l]);
    out.emplace_back("theta.conv" + std::to_string(l) + ".bias", theta.conv_bias[l]);
  }
  out.emplace_back("theta.head.weight", theta.head.weight);
  out.emplace_back("theta.head.bias", theta.head.bias);
  add_mlp(out, "delta.f", critic.f);
  add_mlp(out, "eta.emb", eta.emb);
  add_mlp(out, "eta.edge1", eta.edge1);
  add_mlp(out, "eta.node1", eta.node1);
  add_mlp(out, "eta.edge2", eta.edge2);
  out.emplace_back("w.bilinear", critic.w);
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<Tensor> Model::encoder_parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters())
    if (name.starts_with("theta.")) out.push_back(t);
  return out;
}

std::vector<Tensor> Model::beta_parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters())
    if (name.starts_with("theta.") || name.starts_with("delta.")) out.push_back(t);
  return out;
}

std::vector<Tensor> Model::omega_parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters())
    if (name.starts_with("theta.") || name.starts_with("eta.") || name.starts_with("w.")) out.push_back(t);
  return out;
}

Model Model::clone() const {
  NamedArrays arrays = named_parameters();
  arrays.emplace_back("meta.arch", arch_array(config));
  for (auto& [name, t] : arrays) t = t.clone();
  return from_arrays(arrays);
}

void Model::save(const std::string& path) const {
  NamedArrays arrays = named_parameters();
  arrays.emplace_back("meta.arch", arch_array(config));
  save_weights(path, arrays);
}

Model Model::load(const std::string& path) { return from_arrays(load_weights(path)); }

Model Model::from_arrays(const NamedArrays& arrays) {
  std::map<std::string, Tensor> by_name;
  for (const auto& [name, t] : arrays) by_name.emplace(name, t);
  auto meta = by_name.find("meta.arch");
  if (meta == by_name.end()) throw std::runtime_error("checkpoint: missing meta.arch");
  auto a = meta->second.values();
  if (a.size() < 9) throw std::runtime_error("checkpoint: malformed meta.arch");
  ModelConfig cfg;
  auto as_size = [](double v) {
    if (!(v >= 0.0) || v != std::floor(v)) throw std::runtime_error("checkpoint: non-integral architecture value");
    return static_cast<std::size_t>(v);
  };
  cfg.height = as_size(a[0]);
  cfg.width = as_size(a[1]);
  cfg.channels = as_size(a[2]);
  cfg.S = as_size(a[3]);
  cfg.D = as_size(a[4]);
  cfg.K = as_size(a[5]);
  cfg.hidden = as_size(a[6]);
  cfg.tau = a[7];
  const auto nconv = as_size(a[8]);
  if (a.size() != 9 + nconv) throw std::runtime_error("checkpoint: meta.arch conv width count mismatch");
  cfg.conv_widths.clear();
  for (std::size_t i = 0; i < nconv; ++i) cfg.conv_widths.push_back(as_size(a[9 + i]));

  Model m = zeros(cfg);
  for (auto& [name, param] : m.named_parameters()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint: missing array '" + name + "'");
    if (it->second.shape() != param.shape()) {
      throw std::runtime_error("checkpoint: array '" + name + "' has shape " + shape_str(it->second.shape()) +
                               ", expected " + shape_str(param.shape()));
    }
    auto dst = param.mutable_values();
    std::copy(it->second.values().begin(), it->second.values().end(), dst.begin());
  }
  return m;
}

std::uint64_t parameter_checksum(const std::vector<Tensor>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params) {
    for (double v : p.values()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xFF;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

Tensor images_to_nchw(std::span<const double> hwc, std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
  if (hwc.size() != n * h * w * c) {
    throw ShapeError("images_to_nchw: " + std::to_string(hwc.size()) + " values for " + std::to_string(n) + " images of " +
                     std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c));
  }
  std::vector<double> out(hwc.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch)
          out[((i * c + ch) * h + y) * w + x] = hwc[((i * h + y) * w + x) * c + ch];
  return Tensor({n, c, h, w}, std::move(out));
}

Tensor encode_batch(const EncoderParams& theta, const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("encode: expected [N,C,H,W], got " + shape_str(x.shape()));
  Tensor h = x;
  for (std::size_t l = 0; l < theta.conv_weight.size(); ++l) {
    h = ops::avg_pool2x2(ops::relu(ops::conv2d(h, theta.conv_weight[l], theta.conv_bias[l])));
  }
  return theta.head(ops::global_avg_pool(h));
}

Tensor encode(std::span<const double> image_hwc, const Model& model) {
  const auto& c = model.config;
  Tensor x = images_to_nchw(image_hwc, 1, c.height, c.width, c.channels);
  return ops::reshape(encode_batch(model.theta, x), {c.S, c.D});
}

Tensor gumbel_sample(const Shape& shape, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x6A3B));
  std::vector<double> v(numel(shape));
  for (auto& g : v) g = -std::log(-std::log(rng.uniform()));
  return Tensor(shape, std::move(v));
}

std::size_t edge_row(std::size_t n, std::size_t i, std::size_t j, std::size_t S) {
  return n * S * (S - 1) + i * (S - 1) + (j < i ? j : j - 1);
}

RelationOutput mpnn_relations(const Tensor& z, const MpnnParams& eta, std::size_t S, const Tensor& gumbel) {
  if (z.rank() != 2 || z.dim(1) % S != 0) {
    throw ShapeError("mpnn_relations: z must be [N, S*D] with S=" + std::to_string(S) + ", got " + shape_str(z.shape()));
  }
  const std::size_t N = z.dim(0), D = z.dim(1) / S, E = S * (S - 1);
  if (eta.emb.in_width() != D) {
    throw ShapeError("mpnn_relations: m_emb expects width " + std::to_string(eta.emb.in_width()) + ", got D=" + std::to_string(D));
  }
  const std::size_t K = eta.edge2.out_width();
  if (gumbel.shape() != Shape{N * E, K}) {
    throw ShapeError("mpnn_relations: gumbel noise must be " + shape_str({N * E, K}) + ", got " + shape_str(gumbel.shape()));
  }
  std::vector<std::size_t> first(N * E), second(N * E);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t j = 0; j < S; ++j) {
        if (i == j) continue;
        const auto e = edge_row(n, i, j, S);
        first[e] = n * S + i;
        second[e] = n * S + j;
      }

  Tensor nodes = ops::reshape(z, {N * S, D});
  Tensor h1 = eta.emb(nodes);
  Tensor he1 = eta.edge1(ops::concat({ops::index_select(h1, first), ops::index_select(h1, second)}, 1));
  Tensor h2 = eta.node1(ops::segment_sum(he1, first, N * S));
  Tensor logits = eta.edge2(ops::concat({ops::index_select(h2, first), ops::index_select(h2, second), he1}, 1));
  Tensor relaxed = ops::softmax(ops::scale(ops::add(logits, gumbel), 1.0 / eta.tau));

  // Scatter edges into the full S x S grid; diagonal cells read an appended zero row.
  Tensor padded = ops::concat({relaxed, Tensor::zeros({1, K})}, 0);
  std::vector<std::size_t> grid(N * S * S);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t j = 0; j < S; ++j) grid[(n * S + i) * S + j] = (i == j) ? N * E : edge_row(n, i, j, S);
  Tensor structure = ops::reshape(ops::index_select(padded, grid), {N, S * S * K});
  return {logits, relaxed, structure};
}

RelationOutput mpnn_relations(const Tensor& z, const MpnnParams& eta, std::size_t S, std::uint64_t seed) {
  if (z.rank() != 2) throw ShapeError("mpnn_relations: z must be rank 2, got " + shape_str(z.shape()));
  return mpnn_relations(z, eta, S, gumbel_sample({z.dim(0) * S * (S - 1), eta.edge2.out_width()}, seed));
}

Tensor harden_structure(const Tensor& structure, std::size_t S, std::size_t K) {
  if (structure.rank() != 2 || structure.dim(1) != S * S * K) {
    throw ShapeError("harden_structure: expected [N, S*S*K], got " + shape_str(structure.shape()));
  }
  const std::size_t N = structure.dim(0);
  std::vector<double> out(structure.numel(), 0.0);
  auto v = structure.values();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t j = 0; j < S; ++j) {
        if (i == j) continue;
        const std::size_t base = n * S * S * K + (i * S + j) * K;
        const auto best = std::max_element(v.begin() + static_cast<std::ptrdiff_t>(base),
                                           v.begin() + static_cast<std::ptrdiff_t>(base + K)) -
                          v.begin();
        out[static_cast<std::size_t>(best)] = 1.0;
      }
  return Tensor(structure.shape(), std::move(out));
}

Tensor critic_z_scores(const Mlp& f, const Tensor& gx, const Tensor& z) {
  if (gx.shape() != z.shape() || gx.rank() != 2) {
    throw ShapeError("critic_z: latents must share shape [N, S*D], got " + shape_str(gx.shape()) + " and " + shape_str(z.shape()));
  }
  Tensor scores = f(ops::concat({gx, z}, 1));
  return ops::reshape(scores, {gx.dim(0)});
}

Tensor structure_bilinear(const Tensor& h, const Tensor& w, const Tensor& a) {
  if (w.rank() != 3 || w.dim(1) != w.dim(2)) throw ShapeError("structure_bilinear: w must be [K, P, P], got " + shape_str(w.shape()));
  const std::size_t K = w.dim(0), P = w.dim(1);
  if (h.rank() != 2 || h.shape() != a.shape() || h.dim(1) != P * K) {
    throw ShapeError("structure_bilinear: h and a must be [N, " + std::to_string(P * K) + "], got " + shape_str(h.shape()) +
                     " and " + shape_str(a.shape()));
  }
  const std::size_t N = h.dim(0);
  auto hv = h.values(), wv = w.values(), av = a.values();
  std::vector<double> out(N, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    const double* hn = hv.data() + n * P * K;
    const double* an = av.data() + n * P * K;
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double* wk = wv.data() + k * P * P;
      for (std::size_t p = 0; p < P; ++p) {
        const double hp = hn[p * K + k];
        if (hp == 0.0) continue;
        double row = 0.0;
        for (std::size_t q = 0; q < P; ++q) row += wk[p * P + q] * an[q * K + k];
        total += hp * row;
      }
    }
    out[n] = total;
  }
  auto ph = h.impl(), pw = w.impl(), pa = a.impl();
  return make_result({N}, std::move(out), {h, w, a}, [ph, pw, pa, N, K, P](const GradContext& g) {
    const auto& hv2 = ph->values;
    const auto& wv2 = pw->values;
    const auto& av2 = pa->values;
    for (std::size_t n = 0; n < N; ++n) {
      const double go = g.out[n];
      if (go == 0.0) continue;
      const double* hn = hv2.data() + n * P * K;
      const double* an = av2.data() + n * P * K;
      for (std::size_t k = 0; k < K; ++k) {
        const double* wk = wv2.data() + k * P * P;
        for (std::size_t p = 0; p < P; ++p) {
          const double hp = hn[p * K + k];
          double row = 0.0;
          for (std::size_t q = 0; q < P; ++q) {
            const double wpq = wk[p * P + q];
            const double aq = an[q * K + k];
            row += wpq * aq;
            if (!g.in[2].empty()) g.in[2][n * P * K + q * K + k] += go * hp * wpq;
            if (!g.in[1].empty()) g.in[1][k * P * P + p * P + q] += go * hp * aq;
          }
          if (!g.in[0].empty()) g.in[0][n * P * K + p * K + k] += go * row;
        }
      }
    }
  });
}

Tensor critic_z(std::span<const double> image_hwc, const Tensor& z, const Model& model) {
  const auto& c = model.config;
  if (z.numel() != c.latent_width()) {
    throw ShapeError("critic_z: z must have S*D=" + std::to_string(c.latent_width()) + " entries, got " + shape_str(z.shape()));
  }
  Tensor gx = encode_batch(model.theta, images_to_nchw(image_hwc, 1, c.height, c.width, c.channels));
  return ops::reshape(critic_z_scores(model.critic.f, gx, ops::reshape(z, {1, c.latent_width()})), {});
}

Tensor critic_a(std::span<const double> image_hwc, const Tensor& a, const Model& model, std::uint64_t seed) {
  const auto& c = model.config;
  if (a.shape() != Shape{c.S, c.S, c.K}) {
    throw ShapeError("critic_a: a must be " + shape_str({c.S, c.S, c.K}) + ", got " + shape_str(a.shape()));
  }
  Tensor gx = encode_batch(model.theta, images_to_nchw(image_hwc, 1, c.height, c.width, c.channels));
  auto rel = mpnn_relations(gx, model.eta, c.S, seed);
  // Self-relations never enter the sum.
  std::vector<double> off(c.S * c.S * c.K, 1.0);
  for (std::size_t i = 0; i < c.S; ++i)
    for (std::size_t k = 0; k < c.K; ++k) off[(i * c.S + i) * c.K + k] = 0.0;
  Tensor a_off = ops::mul(ops::reshape(a, {1, c.S * c.S * c.K}), Tensor({1, c.S * c.S * c.K}, std::move(off)));
  return ops::reshape(structure_bilinear(rel.structure, model.critic.w, a_off), {});
}

}  // namespace structssl::models
