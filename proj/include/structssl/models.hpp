#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "structssl/serialize.hpp"
#include "structssl/tensor.hpp"

namespace structssl::models {

struct ModelConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::size_t S = 8;  // entities (rows of z)
  std::size_t D = 8;  // features per entity
  std::size_t K = 2;  // relation types
  std::vector<std::size_t> conv_widths{32, 64, 128, 256};
  std::size_t hidden = 64;
  double tau = 0.5;  // Gumbel-softmax temperature

  // Throws std::invalid_argument on an unusable configuration.
  void validate() const;
  std::size_t latent_width() const { return S * D; }
  std::size_t edges_per_graph() const { return S * (S - 1); }
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const;
};

// One hidden layer with relu.
struct Mlp {
  Linear hidden;
  Linear out;
  Tensor operator()(const Tensor& x) const;
  std::size_t in_width() const { return hidden.weight.dim(0); }
  std::size_t out_width() const { return out.weight.dim(1); }
};

// Conv-4 backbone: four (conv3x3 -> relu -> avgpool2x2) blocks, global average
// pooling, and a linear head of width S*D.
struct EncoderParams {
  std::vector<Tensor> conv_weight;
  std::vector<Tensor> conv_bias;
  Linear head;
};

struct MpnnParams {
  Mlp emb;    // D -> h
  Mlp edge1;  // 2h -> h
  Mlp node1;  // h -> h
  Mlp edge2;  // 3h -> K
  double tau = 0.5;
};

struct CriticParams {
  Mlp f;     // projection critic on [flatten(g(x)), flatten(z)]
  Tensor w;  // [K, S*S, S*S] bilinear structure weights
};

class Model {
 public:
  ModelConfig config;
  EncoderParams theta;
  MpnnParams eta;
  CriticParams critic;

  // Uniform fan-in initialization, zero biases.
  static Model init(const ModelConfig& config, std::uint64_t seed);
  static Model zeros(const ModelConfig& config);

  // Named views (shared storage) using the checkpoint prefixes
  // theta., delta., eta., w.
  NamedArrays named_parameters() const;
  std::vector<Tensor> parameters() const;
  // Parameters driving T_beta = f_delta(g_theta(x), z).
  std::vector<Tensor> beta_parameters() const;
  // Parameters driving T_omega(x, a).
  std::vector<Tensor> omega_parameters() const;
  std::vector<Tensor> encoder_parameters() const;

  Model clone() const;
  void save(const std::string& path) const;
  static Model load(const std::string& path);
  static Model from_arrays(const NamedArrays& arrays);
};

// FNV-1a hash over the bit patterns of every parameter value.
std::uint64_t parameter_checksum(const std::vector<Tensor>& params);

// Packs n images stored H x W x C (row-major, contiguous) into an [n, C, H, W] tensor.
Tensor images_to_nchw(std::span<const double> hwc, std::size_t n, std::size_t h, std::size_t w, std::size_t c);

// [N, C, H, W] -> [N, S*D]
Tensor encode_batch(const EncoderParams& theta, const Tensor& x);
// Single image H x W x C -> z as an [S, D] tensor.
Tensor encode(std::span<const double> image_hwc, const Model& model);

// Gumbel(0,1) noise: -log(-log(u)), u ~ U(0,1).
Tensor gumbel_sample(const Shape& shape, std::uint64_t seed);

struct RelationOutput {
  Tensor logits;     // [N*S*(S-1), K] raw edge logits h^2_(i,j)
  Tensor relaxed;    // [N*S*(S-1), K] softmax((logits + g) / tau)
  Tensor structure;  // [N, S*S*K] full tensor, zero diagonal, layout ((i*S+j)*K+k)
};

// Edge (i, j), i != j, of graph n sits at row n*S*(S-1) + i*(S-1) + (j < i ? j : j-1).
std::size_t edge_row(std::size_t n, std::size_t i, std::size_t j, std::size_t S);

// Two-round message passing over the complete graph of S entities per sample.
// z: [N, S*D]; gumbel: [N*S*(S-1), K].
RelationOutput mpnn_relations(const Tensor& z, const MpnnParams& eta, std::size_t S, const Tensor& gumbel);
RelationOutput mpnn_relations(const Tensor& z, const MpnnParams& eta, std::size_t S, std::uint64_t seed);

// Argmax one-hot per off-diagonal pair; zero diagonal. structure: [N, S*S*K].
Tensor harden_structure(const Tensor& structure, std::size_t S, std::size_t K);

// T_beta on batched rows: f_delta([g(x)_r, z_r]) -> [N]
Tensor critic_z_scores(const Mlp& f, const Tensor& gx, const Tensor& z);
// Sum_k flatten(h_k)^T w_k flatten(a_k) per row -> [N]. h, a: [N, S*S*K]; w: [K, S*S, S*S].
Tensor structure_bilinear(const Tensor& h, const Tensor& w, const Tensor& a);

// Single-sample critics. `a` is an S x S x K tensor; h_gamma(x) uses Gumbel noise from `seed`.
Tensor critic_z(std::span<const double> image_hwc, const Tensor& z, const Model& model);
Tensor critic_a(std::span<const double> image_hwc, const Tensor& a, const Model& model, std::uint64_t seed);

}  // namespace structssl::models
