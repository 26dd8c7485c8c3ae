#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "structssl/errors.hpp"

namespace structssl {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  // Tape that produced this tensor as an op output (0 for leaves).
  std::uint64_t producer_tape = 0;
  // Number of live tapes that hold this tensor as a node.
  int live_tape_refs = 0;
};

}  // namespace detail

// Dense row-major array of doubles. Copies share storage; use clone() for a
// deep copy. Tensors referenced by a live Tape are frozen.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->values.size(); }

  std::span<const double> values() const { return impl_->values; }
  // Throws if a live tape still references this tensor.
  std::span<double> mutable_values();
  double operator[](std::size_t i) const { return impl_->values[i]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Zero-filled view semantics: returns zeros if backward never reached it.
  std::vector<double> grad() const;
  void clear_grad() { impl_->grad.clear(); }

  Tensor clone() const;
  Tensor detach() const { return clone(); }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Per-input gradient sinks handed to a recorded op's backward closure. An
// empty span means that input does not need a gradient.
struct GradContext {
  std::span<const double> out;
  std::vector<std::span<double>> in;
};

using BackwardFn = std::function<void(const GradContext&)>;

// Ordered record of differentiable ops. Entries are appended in execution
// order, which is a topological order of the graph.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t num_ops() const { return entries_.size(); }
  std::size_t num_nodes() const { return nodes_.size(); }
  bool contains(const Tensor& t) const;

  // Registers `output` as produced from `inputs`. Called by op
  // implementations; extension ops may call it directly through make_result.
  void record(const std::vector<Tensor>& inputs, const Tensor& output, BackwardFn fn);

  // Reverse pass from a scalar loss recorded on this tape. Every node on the
  // tape gets its grad populated (zeros where unreachable).
  void backward(const Tensor& loss);

 private:
  std::size_t node_index(const Tensor& t);

  struct Entry {
    std::vector<std::size_t> inputs;
    std::size_t output;
    BackwardFn fn;
  };

  std::uint64_t id_;
  std::vector<std::shared_ptr<detail::TensorImpl>> nodes_;
  std::unordered_map<const detail::TensorImpl*, std::size_t> index_;
  std::vector<Entry> entries_;
};

// Installs a tape as the thread's active recording target for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording on this thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Builds an op result, recording it on the active tape when any input
// requires gradients.
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   BackwardFn fn);

void backward(const Tensor& loss, Tape& tape);

// Runs backward and returns d loss / d t for each requested tensor; tensors
// the loss does not depend on get zeros.
std::vector<std::vector<double>> gradients(const Tensor& loss, Tape& tape,
                                           std::span<const Tensor> wrt);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                  double eps = 1e-5);

}  // namespace structssl
