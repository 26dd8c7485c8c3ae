#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "structssl/tensor.hpp"

namespace structssl {

struct AdamHyper {
  double lr = 1e-3;
  double b1 = 0.9;
  double b2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t t = 0;
  AdamHyper hyper;

  AdamState() = default;
  AdamState(std::size_t size, AdamHyper h) : m(size, 0.0), v(size, 0.0), hyper(h) {}
};

// Bias-corrected Adam update of `param` in place; increments state.t.
void adam_step(Tensor& param, std::span<const double> grad, AdamState& state);

// Adam over a fixed list of parameters, reading each parameter's grad buffer.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamHyper hyper);

  // Must be called after the tape that produced the grads is destroyed.
  void step();
  std::size_t steps() const { return states_.empty() ? 0 : states_.front().t; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
};

}  // namespace structssl
