#include "structssl/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "structssl/ops.hpp"
#include "structssl/optim.hpp"
#include "structssl/rng.hpp"
#include "structssl/tensor.hpp"

namespace structssl::estimators {

GaussianSamples sample_gaussian_pair(double rho, std::size_t n, std::uint64_t seed) {
  if (!(std::abs(rho) < 1.0)) throw DomainError("correlation must satisfy |rho| < 1");
  Rng rng(mix_seed(seed, 0x6A55));
  GaussianSamples s;
  s.x.resize(n);
  s.y.resize(n);
  const double c = std::sqrt(1.0 - rho * rho);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = rng.normal(), b = rng.normal();
    s.x[i] = a;
    s.y[i] = rho * a + c * b;
  }
  return s;
}

std::vector<std::size_t> bin_values(const std::vector<double>& values, std::size_t bins, double lo, double hi) {
  if (bins == 0 || !(hi > lo)) throw std::invalid_argument("bin_values: need bins > 0 and hi > lo");
  std::vector<std::size_t> out(values.size());
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double t = std::floor((values[i] - lo) / width);
    out[i] = t < 0 ? 0 : std::min(bins - 1, static_cast<std::size_t>(t));
  }
  return out;
}

namespace {

struct Counts {
  std::vector<double> joint;    // empirical p(x_b, y_c)
  std::vector<double> product;  // p(x_b) p(y_c)
};

Counts tabulate(const std::vector<std::size_t>& cx, std::size_t nx, const std::vector<std::size_t>& cy, std::size_t ny) {
  if (cx.size() != cy.size() || cx.empty()) throw std::invalid_argument("tabular estimator needs equal, non-empty sample lists");
  Counts c;
  c.joint.assign(nx * ny, 0.0);
  std::vector<double> px(nx, 0.0), py(ny, 0.0);
  const double w = 1.0 / static_cast<double>(cx.size());
  for (std::size_t i = 0; i < cx.size(); ++i) {
    if (cx[i] >= nx || cy[i] >= ny) throw std::out_of_range("tabular estimator: sample code out of range");
    c.joint[cx[i] * ny + cy[i]] += w;
    px[cx[i]] += w;
    py[cy[i]] += w;
  }
  c.product.resize(nx * ny);
  for (std::size_t b = 0; b < nx; ++b)
    for (std::size_t k = 0; k < ny; ++k) c.product[b * ny + k] = px[b] * py[k];
  return c;
}

}  // namespace

double nwj_tabular_bound(const std::vector<double>& critic, const std::vector<std::size_t>& cx, std::size_t nx,
                         const std::vector<std::size_t>& cy, std::size_t ny) {
  if (critic.size() != nx * ny) throw std::invalid_argument("nwj_tabular_bound: critic table has the wrong size");
  const Counts c = tabulate(cx, nx, cy, ny);
  double pos = 0.0, neg = 0.0;
  for (std::size_t t = 0; t < critic.size(); ++t) {
    pos += c.joint[t] * critic[t];
    neg += c.product[t] * std::exp(critic[t]);
  }
  return pos - neg / std::numbers::e;
}

TabularNwjResult fit_tabular_nwj(const std::vector<std::size_t>& cx, std::size_t nx, const std::vector<std::size_t>& cy,
                                 std::size_t ny, const TabularNwjConfig& config) {
  const Counts c = tabulate(cx, nx, cy, ny);
  const Tensor joint({nx * ny}, c.joint), product({nx * ny}, c.product);
  Tensor critic = Tensor::zeros({nx * ny}, true);
  AdamState state(critic.numel(), AdamHyper{config.learning_rate});
  TabularNwjResult r;
  r.trace.reserve(config.iterations);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::vector<double> grad;
    {
      Tape tape;
      TapeScope scope(tape);
      Tensor bound = ops::sub(ops::sum(ops::mul(joint, critic)),
                              ops::scale(ops::sum(ops::mul(product, ops::exp(critic))), 1.0 / std::numbers::e));
      r.trace.push_back(bound.item());
      tape.backward(ops::scale(bound, -1.0));
      grad = critic.grad();
    }
    critic.clear_grad();
    adam_step(critic, grad, state);
  }
  r.critic.assign(critic.values().begin(), critic.values().end());
  r.estimate = nwj_tabular_bound(r.critic, cx, nx, cy, ny);
  return r;
}

double gaussian_nwj_estimate(double rho, std::size_t n, std::uint64_t seed, const GaussianBenchConfig& config) {
  const auto s = sample_gaussian_pair(rho, n, seed);
  const auto bx = bin_values(s.x, config.bins, -config.range, config.range);
  const auto by = bin_values(s.y, config.bins, -config.range, config.range);
  return fit_tabular_nwj(bx, config.bins, by, config.bins, config.fit).estimate;
}

}  // namespace structssl::estimators
