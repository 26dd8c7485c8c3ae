#include "structssl/optim.hpp"

#include <cmath>

namespace structssl {

void adam_step(Tensor& param, std::span<const double> grad, AdamState& state) {
  if (grad.size() != param.numel()) {
    throw ShapeError("adam_step: grad has " + std::to_string(grad.size()) + " entries, param shape " +
                     shape_str(param.shape()));
  }
  if (state.m.size() != param.numel() || state.v.size() != param.numel()) {
    throw ShapeError("adam_step: state size does not match param shape " + shape_str(param.shape()));
  }
  const auto& h = state.hyper;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(h.b1, t);
  const double c2 = 1.0 - std::pow(h.b2, t);
  auto p = param.mutable_values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    state.m[i] = h.b1 * state.m[i] + (1.0 - h.b1) * grad[i];
    state.v[i] = h.b2 * state.v[i] + (1.0 - h.b2) * grad[i] * grad[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    p[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
  }
}

Adam::Adam(std::vector<Tensor> params, AdamHyper hyper) : params_(std::move(params)) {
  states_.reserve(params_.size());
  for (const auto& p : params_) states_.emplace_back(p.numel(), hyper);
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto g = params_[i].grad();
    adam_step(params_[i], g, states_[i]);
    params_[i].clear_grad();
  }
}

}  // namespace structssl
