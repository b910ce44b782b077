#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap shared handle. Values are fixed once an op has produced
// them; only leaves are mutated in place (optimizer updates, finite-difference
// probes), and gradients accumulate into a per-tensor buffer.
//
// Ops record a backward closure on the thread's active Tape when any operand
// requires a gradient. With no active tape nothing is recorded, which is how
// inference runs.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "megdec/errors.hpp"

namespace megdec {

using Shape = std::vector<std::size_t>;

/// Receives the output gradient and the output values of the op being reversed.
using BackwardFn = std::function<void(std::span<const double> grad, std::span<const double> value)>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};
}  // namespace detail

class Tensor {
 public:
  /// Rank-0 zero.
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  /// A trainable leaf.
  static Tensor parameter(Shape shape, std::vector<double> data);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const { return node_->data; }
  /// In-place access for leaves only (optimizers, finite differences, test setup).
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double operator[](std::size_t flat_index) const { return node_->data[flat_index]; }
  /// Bounds-checked element read by multi-index.
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient values; zeros when nothing has been accumulated.
  std::vector<double> grad() const;
  void zero_grad();
  void accumulate_grad(std::span<const double> g) const;

  /// Deep copy of the values, detached from any tape.
  Tensor clone() const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<detail::Node> node_;
  friend class Tape;
  friend Tensor make_result(Shape, std::vector<double>, std::initializer_list<Tensor>,
                            BackwardFn);
  friend Tensor make_result(Shape, std::vector<double>, const std::vector<Tensor>&,
                            BackwardFn);
};

/// Ordered record of differentiable ops executed while it is active.
///
/// Constructing a Tape makes it the active tape of the calling thread; the
/// previous one is restored on destruction. Entries are appended in execution
/// order, so replaying them backwards is a valid reverse topological order.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::shared_ptr<detail::Node> output, BackwardFn fn);
  std::size_t size() const { return entries_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded op.
  void backward(const Tensor& loss);

 private:
  struct Entry {
    std::shared_ptr<detail::Node> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  Tape* previous_;
};

/// Suspends recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

/// Backward through the active tape. Throws ContractError for non-scalar losses
/// or when no tape is active.
void backward(const Tensor& loss);

/// Builds the output of a differentiable op. `backward_fn` must accumulate into
/// the inputs that require a gradient; it is only
/// recorded when a tape is active and some input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   BackwardFn backward_fn);
Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   BackwardFn backward_fn);

// ---------------------------------------------------------------------------
// Elementwise. Binary ops accept equal shapes, or a rank-0/size-1 operand on
// either side.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor elu(const Tensor& a, double alpha = 1.0);
Tensor exp(const Tensor& a);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Linear algebra. matmul works over the trailing two axes with equal leading
// (batch) axes; linear maps the last axis of `x` through a rank-2 weight.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor linear(const Tensor& x, const Tensor& weight);
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor transpose_last(const Tensor& a);

// Shape manipulation.
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);

/// Numerically stabilized softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Mean categorical cross-entropy of softmax(logits) against integer labels.
/// logits: [batch, classes].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// ---------------------------------------------------------------------------

/// Central-difference gradient check of a scalar-valued function of `inputs`.
///
/// Returns max |analytic - numeric| / max(1, |numeric|) over up to
/// `max_coords` sampled coordinates per input (all when the input is small).
/// Throws NumericError when f is non-finite at a probed point.
double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double eps = 1e-6,
                  std::size_t max_coords = 64, unsigned seed = 0);

}  // namespace megdec
