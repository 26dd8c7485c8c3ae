#pragma once

#include <cstdint>
#include <vector>

#include "structssl/ops.hpp"
#include "structssl/rng.hpp"
#include "structssl/tensor.hpp"

namespace testutil {

inline structssl::Tensor random_tensor(const structssl::Shape& shape, structssl::Rng& rng, double lo = -1.0,
                                       double hi = 1.0, bool requires_grad = false) {
  std::vector<double> v(structssl::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return structssl::Tensor(shape, std::move(v), requires_grad);
}

// Reduces a tensor to a scalar with fixed random weights, so every output
// coordinate contributes to a gradient check.
inline structssl::Tensor weighted_sum(const structssl::Tensor& y, std::uint64_t seed) {
  structssl::Rng rng(seed);
  return structssl::ops::sum(structssl::ops::mul(y, random_tensor(y.shape(), rng)));
}

}  // namespace testutil
