#pragma once

#include <cstddef>
#include <vector>

#include "structssl/tensor.hpp"

// Differentiable tensor ops. Every op records itself on the active tape when
// an input requires gradients.
namespace structssl::ops {

// Elementwise arithmetic with right-aligned (numpy-style) broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

// x: [N,C,H,W], weight: [O,C,k,k] with odd k, bias: [O]. Stride 1, zero "same" padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);
// 2x2 average pooling, stride 2; H and W must be even.
Tensor avg_pool2x2(const Tensor& x);
// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
// Throws DomainError on non-positive input.
Tensor log(const Tensor& x);
// min(x, limit); gradient is zero where clamped. `clamped` receives the count.
Tensor clamp_max(const Tensor& x, double limit, std::size_t* clamped = nullptr);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reduction over the last axis: [..., n] -> [...]
Tensor sum_last(const Tensor& x);
Tensor logsumexp(const Tensor& x);
Tensor softmax(const Tensor& x);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
// Slice [start, start+length) along `axis`.
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
// Gathers slices of axis 0.
Tensor index_select(const Tensor& x, const std::vector<std::size_t>& index);
// Sums slices of axis 0 into `num_segments` buckets.
Tensor segment_sum(const Tensor& x, const std::vector<std::size_t>& segment, std::size_t num_segments);

// Mean squared difference over all elements.
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace structssl::ops
