#include "structssl/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

namespace structssl {

namespace {

std::atomic<std::uint64_t> next_tape_id{1};
thread_local Tape* current_tape = nullptr;

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (structssl::numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(structssl::numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = structssl::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  }
  return impl_->shape[axis];
}

std::span<double> Tensor::mutable_values() {
  if (impl_->live_tape_refs > 0) {
    throw std::logic_error("cannot mutate a tensor referenced by a live tape");
  }
  return impl_->values;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_str(shape()));
  return impl_->values[0];
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return impl_->grad;
}

Tensor Tensor::clone() const {
  return Tensor(impl_->shape, impl_->values, false);
}

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

Tape::~Tape() {
  for (auto& n : nodes_) --n->live_tape_refs;
}

bool Tape::contains(const Tensor& t) const {
  return index_.count(t.impl().get()) > 0;
}

std::size_t Tape::node_index(const Tensor& t) {
  auto* raw = t.impl().get();
  auto it = index_.find(raw);
  if (it != index_.end()) return it->second;
  auto idx = nodes_.size();
  nodes_.push_back(t.impl());
  ++t.impl()->live_tape_refs;
  index_.emplace(raw, idx);
  return idx;
}

void Tape::record(const std::vector<Tensor>& inputs, const Tensor& output, BackwardFn fn) {
  Entry e;
  e.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    e.inputs.push_back(in.requires_grad() ? node_index(in) : SIZE_MAX);
  }
  output.impl()->producer_tape = id_;
  e.output = node_index(output);
  e.fn = std::move(fn);
  entries_.push_back(std::move(e));
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  auto it = index_.find(loss.impl().get());
  if (it == index_.end() || loss.impl()->producer_tape != id_) {
    throw std::invalid_argument("loss was not recorded on this tape");
  }
  std::vector<std::vector<double>> grads(nodes_.size());
  grads[it->second].assign(1, 1.0);

  for (auto e = entries_.rbegin(); e != entries_.rend(); ++e) {
    auto& gout = grads[e->output];
    if (gout.empty()) continue;
    GradContext ctx;
    ctx.out = gout;
    ctx.in.reserve(e->inputs.size());
    for (auto idx : e->inputs) {
      if (idx == SIZE_MAX) {
        ctx.in.emplace_back();
        continue;
      }
      auto& g = grads[idx];
      if (g.empty()) g.assign(nodes_[idx]->values.size(), 0.0);
      ctx.in.emplace_back(g);
    }
    e->fn(ctx);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (grads[i].empty()) grads[i].assign(nodes_[i]->values.size(), 0.0);
    nodes_[i]->grad = std::move(grads[i]);
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }

TapeScope::~TapeScope() { current_tape = previous_; }

NoGradScope::NoGradScope() : previous_(current_tape) { current_tape = nullptr; }

NoGradScope::~NoGradScope() { current_tape = previous_; }

Tape* active_tape() { return current_tape; }

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   BackwardFn fn) {
  Tensor out(std::move(shape), std::move(values));
  Tape* tape = current_tape;
  if (!tape) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.set_requires_grad(true);
  tape->record(inputs, out, std::move(fn));
  return out;
}

void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

std::vector<std::vector<double>> gradients(const Tensor& loss, Tape& tape,
                                           std::span<const Tensor> wrt) {
  tape.backward(loss);
  std::vector<std::vector<double>> out;
  out.reserve(wrt.size());
  for (const auto& t : wrt) {
    if (tape.contains(t)) {
      out.push_back(t.grad());
    } else {
      out.emplace_back(t.numel(), 0.0);
    }
  }
  return out;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check step must be positive");
  Tensor x(point.shape(), std::vector<double>(point.values().begin(), point.values().end()), true);
  std::vector<double> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f(x);
    if (y.numel() != 1) throw ShapeError("grad_check needs a scalar function, got " + shape_str(y.shape()));
    if (!tape.contains(y)) {
      analytic.assign(x.numel(), 0.0);
    } else {
      tape.backward(y);
      analytic = x.grad();
    }
  }
  double worst = 0.0;
  std::vector<double> probe(point.values().begin(), point.values().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = f(Tensor(point.shape(), probe)).item();
    probe[i] = saved - eps;
    const double down = f(Tensor(point.shape(), probe)).item();
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace structssl
