#pragma once

// Dense f64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage. Operations are
// recorded on the Tape active on the calling thread (see TapeScope) whenever
// at least one operand requires a gradient. Without an active tape the same
// calls run as plain forward computations.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lgdg/errors.hpp"

namespace lgdg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  const void* tape = nullptr;  // tape that produced this tensor; null for leaves
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor from(const Shape& shape, std::vector<double> values);
  static Tensor scalar(double value);
  // Leaf that requires a gradient.
  static Tensor parameter(const Shape& shape, std::vector<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Direct write access. Only meaningful on leaves (optimizer updates,
  // finite-difference probes); writing into a recorded intermediate corrupts
  // its backward rule.
  std::span<double> mutable_data() { return impl_->data; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }
  bool is_leaf() const { return impl_->tape == nullptr; }

  double item() const;
  double operator[](std::size_t flat) const { return impl_->data[flat]; }

  // Fresh leaf with copied values and no gradient tracking.
  Tensor detach() const;
  // Fresh leaf with copied values that keeps requires_grad.
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

Tensor make_tensor(Shape shape, std::vector<double> data);

// Single-use record of differentiable operations in creation order.
class Tape {
 public:
  struct Entry {
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Entry entry);
  // Populates grad on every requires_grad leaf reachable from `loss`.
  // Throws TapeError when called twice or with a non-scalar loss.
  void backward(const Tensor& loss);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

// Makes `tape` the recording target of the current thread for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* current_tape();

// Runs backward on the thread's active tape.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Operations

enum class ElementwiseOp { Add, Sub, Mul, Relu, Sigmoid, Log, Scale, Softplus, Tanh };

// Binary ops take `b`; Scale uses `constant`; the rest are unary.
Tensor apply_elementwise(ElementwiseOp op, const Tensor& a,
                         const Tensor* b = nullptr, double constant = 1.0);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor softplus(const Tensor& a);
Tensor tanh(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, const Shape& shape);
// Concatenates along the leading axis (all trailing extents must agree).
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_rows(std::initializer_list<Tensor> parts);
// Concatenates 2-D tensors along columns.
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_cols(std::initializer_list<Tensor> parts);
// Columns [begin, end) of a 2-D tensor.
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor log_softmax_rows(const Tensor& a);

// x: C×H×W, weight: O×C×k×k, bias: O (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t padding);
// x: C×H×W, weight: C×O×k×k, bias: O (may be undefined). No padding.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride);
// Non-overlapping k×k average pooling; H and W must be divisible by k.
Tensor avg_pool2d(const Tensor& x, std::size_t k);
// Corner-aligned bilinear resampling of a C×H×W map.
Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);
// Mean over spatial axes of C×H×W, returned as 1×C.
Tensor global_avg_pool(const Tensor& x);

// ---------------------------------------------------------------------------
// Finite-difference verification

using ScalarFunction = std::function<Tensor(const Tensor&)>;

// Max over coordinates of |analytic − central| / max(1, |central|).
double grad_check(const ScalarFunction& f, const Tensor& x, double eps = 1e-5);

// Same measure over every element of `params`; `f` must rebuild its output
// from the current parameter values on each call.
double grad_check_params(const std::function<Tensor()>& f,
                         std::span<const Tensor> params, double eps = 1e-5);

}  // namespace lgdg
