#include "lgdg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace lgdg {

namespace {

thread_local Tape* g_tape = nullptr;

using ImplPtr = std::shared_ptr<TensorImpl>;

ImplPtr new_impl(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

ImplPtr new_impl(Shape shape) {
  const std::size_t n = shape_numel(shape);
  return new_impl(std::move(shape), std::vector<double>(n, 0.0));
}

std::vector<double>& grad_buffer(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

bool tracks(const Tensor& t) { return t.defined() && t.requires_grad(); }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (g_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t != nullptr && tracks(*t); });
}

void check_finite(const TensorImpl& out, const char* op) {
  for (double v : out.data) {
    if (!std::isfinite(v)) {
      throw NumericDivergence(std::string("non-finite value produced by ") + op);
    }
  }
}

void require(bool condition, const std::string& message) {
  if (!condition) throw ShapeError(message);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require(t.defined(), std::string(op) + ": undefined tensor");
  require(t.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_str(t.shape()));
}

}  // namespace

// Wraps a finished output and, when needed, records its
// backward rule. `rule` receives the output impl whose grad is populated.
template <class Rule>
Tensor finish_op(ImplPtr out, bool record, const char* op, Rule rule) {
  check_finite(*out, op);
  if (record) {
    out->requires_grad = true;
    out->tape = g_tape;
    TensorImpl* raw = out.get();
    g_tape->record({out, [raw, rule = std::move(rule)]() { rule(*raw); }});
  }
  return Tensor::wrap(std::move(out));
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor make_tensor(Shape shape, std::vector<double> data) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  return Tensor::wrap(new_impl(std::move(shape), std::move(data)));
}

Tensor Tensor::zeros(const Shape& shape) {
  return make_tensor(shape, std::vector<double>(shape_numel(shape), 0.0));
}

Tensor Tensor::full(const Shape& shape, double value) {
  return make_tensor(shape, std::vector<double>(shape_numel(shape), value));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values) {
  return make_tensor(shape, std::move(values));
}

Tensor Tensor::scalar(double value) { return make_tensor({1}, {value}); }

Tensor Tensor::parameter(const Shape& shape, std::vector<double> values) {
  Tensor t = make_tensor(shape, std::move(values));
  t.set_requires_grad(true);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor Tensor::detach() const { return make_tensor(impl_->shape, impl_->data); }

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.set_requires_grad(impl_->requires_grad);
  return t;
}

// ---------------------------------------------------------------------------

void Tape::record(Entry entry) {
  if (consumed_) throw TapeError("cannot record on a consumed tape");
  entries_.push_back(std::move(entry));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw TapeError("backward called twice on the same tape");
  if (!loss.defined() || loss.numel() != 1) {
    throw TapeError("backward requires a scalar loss");
  }
  if (!loss.is_leaf() && loss.impl()->tape != this) {
    throw TapeError("loss was recorded on a different tape");
  }
  consumed_ = true;
  if (!loss.requires_grad()) return;
  grad_buffer(*loss.impl())[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_tape) { g_tape = &tape; }
TapeScope::~TapeScope() { g_tape = previous_; }

Tape* current_tape() { return g_tape; }

void backward(const Tensor& loss) {
  if (g_tape == nullptr) throw TapeError("backward without an active tape");
  g_tape->backward(loss);
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

bool is_binary(ElementwiseOp op) {
  return op == ElementwiseOp::Add || op == ElementwiseOp::Sub || op == ElementwiseOp::Mul;
}

const char* op_name(ElementwiseOp op) {
  switch (op) {
    case ElementwiseOp::Add: return "add";
    case ElementwiseOp::Sub: return "sub";
    case ElementwiseOp::Mul: return "mul";
    case ElementwiseOp::Relu: return "relu";
    case ElementwiseOp::Sigmoid: return "sigmoid";
    case ElementwiseOp::Log: return "log";
    case ElementwiseOp::Scale: return "scale";
    case ElementwiseOp::Softplus: return "softplus";
    case ElementwiseOp::Tanh: return "tanh";
  }
  return "?";
}

Tensor binary_op(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  require(a.defined() && b.defined(), std::string(op_name(op)) + ": undefined operand");
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  const bool same = a.shape() == b.shape();
  require(same || na == 1 || nb == 1,
          std::string(op_name(op)) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  const Shape out_shape = (same || nb == 1) ? a.shape() : b.shape();
  const std::size_t n = shape_numel(out_shape);
  const auto& ad = a.impl()->data;
  const auto& bd = b.impl()->data;
  auto out = new_impl(out_shape);
  auto& od = out->data;
  const std::size_t sa = na == 1 ? 0 : 1;
  const std::size_t sb = nb == 1 ? 0 : 1;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ad[i * sa];
    const double y = bd[i * sb];
    switch (op) {
      case ElementwiseOp::Add: od[i] = x + y; break;
      case ElementwiseOp::Sub: od[i] = x - y; break;
      default: od[i] = x * y; break;
    }
  }
  const bool rec = should_record({&a, &b});
  ImplPtr ai = a.impl();
  ImplPtr bi = b.impl();
  return finish_op(out, rec, op_name(op), [op, ai, bi, sa, sb](const TensorImpl& o) {
    const std::size_t n = o.data.size();
    if (ai->requires_grad) {
      auto& ga = grad_buffer(*ai);
      for (std::size_t i = 0; i < n; ++i) {
        double g = o.grad[i];
        if (op == ElementwiseOp::Mul) g *= bi->data[i * sb];
        ga[i * sa] += g;
      }
    }
    if (bi->requires_grad) {
      auto& gb = grad_buffer(*bi);
      for (std::size_t i = 0; i < n; ++i) {
        double g = o.grad[i];
        if (op == ElementwiseOp::Sub) g = -g;
        if (op == ElementwiseOp::Mul) g *= ai->data[i * sa];
        gb[i * sb] += g;
      }
    }
  });
}

Tensor unary_op(ElementwiseOp op, const Tensor& a, double constant) {
  require(a.defined(), std::string(op_name(op)) + ": undefined operand");
  const auto& ad = a.impl()->data;
  auto out = new_impl(a.shape());
  auto& od = out->data;
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const double x = ad[i];
    switch (op) {
      case ElementwiseOp::Relu: od[i] = x > 0 ? x : 0.0; break;
      case ElementwiseOp::Sigmoid: od[i] = stable_sigmoid(x); break;
      case ElementwiseOp::Log:
        if (!(x > 0)) throw DomainError("log of non-positive value " + std::to_string(x));
        od[i] = std::log(x);
        break;
      case ElementwiseOp::Scale: od[i] = x * constant; break;
      case ElementwiseOp::Softplus: od[i] = stable_softplus(x); break;
      case ElementwiseOp::Tanh: od[i] = std::tanh(x); break;
      default: break;
    }
  }
  const bool rec = should_record({&a});
  ImplPtr ai = a.impl();
  return finish_op(out, rec, op_name(op), [op, ai, constant](const TensorImpl& o) {
    auto& ga = grad_buffer(*ai);
    const auto& x = ai->data;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const double g = o.grad[i];
      switch (op) {
        case ElementwiseOp::Relu: ga[i] += x[i] > 0 ? g : 0.0; break;
        case ElementwiseOp::Sigmoid: ga[i] += g * o.data[i] * (1.0 - o.data[i]); break;
        case ElementwiseOp::Log: ga[i] += g / x[i]; break;
        case ElementwiseOp::Scale: ga[i] += g * constant; break;
        case ElementwiseOp::Softplus: ga[i] += g * stable_sigmoid(x[i]); break;
        case ElementwiseOp::Tanh: ga[i] += g * (1.0 - o.data[i] * o.data[i]); break;
        default: break;
      }
    }
  });
}

}  // namespace

Tensor apply_elementwise(ElementwiseOp op, const Tensor& a, const Tensor* b,
                         double constant) {
  if (is_binary(op)) {
    if (b == nullptr) throw ShapeError(std::string(op_name(op)) + " requires two operands");
    return binary_op(op, a, *b);
  }
  return unary_op(op, a, constant);
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(ElementwiseOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(ElementwiseOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(ElementwiseOp::Mul, a, b); }
Tensor relu(const Tensor& a) { return unary_op(ElementwiseOp::Relu, a, 0.0); }
Tensor sigmoid(const Tensor& a) { return unary_op(ElementwiseOp::Sigmoid, a, 0.0); }
Tensor log(const Tensor& a) { return unary_op(ElementwiseOp::Log, a, 0.0); }
Tensor scale(const Tensor& a, double factor) {
  return unary_op(ElementwiseOp::Scale, a, factor);
}
Tensor softplus(const Tensor& a) { return unary_op(ElementwiseOp::Softplus, a, 0.0); }
Tensor tanh(const Tensor& a) { return unary_op(ElementwiseOp::Tanh, a, 0.0); }

// ---------------------------------------------------------------------------
// Reductions and shape ops

Tensor sum(const Tensor& a) {
  require(a.defined(), "sum: undefined operand");
  double total = 0.0;
  for (double v : a.data()) total += v;
  auto out = new_impl({1}, {total});
  ImplPtr ai = a.impl();
  return finish_op(out, should_record({&a}), "sum", [ai](const TensorImpl& o) {
    auto& ga = grad_buffer(*ai);
    for (double& g : ga) g += o.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  require(a.defined(), "mean: undefined operand");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  const auto& A = a.impl()->data;
  const auto& B = b.impl()->data;
  auto out = new_impl({m, n});
  auto& C = out->data;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &B[p * n];
      double* crow = &C[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  ImplPtr ai = a.impl();
  ImplPtr bi = b.impl();
  return finish_op(out, should_record({&a, &b}), "matmul",
                   [ai, bi, m, k, n](const TensorImpl& o) {
                     const auto& G = o.grad;
                     if (ai->requires_grad) {
                       auto& ga = grad_buffer(*ai);
                       const auto& B = bi->data;
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t p = 0; p < k; ++p) {
                           double acc = 0.0;
                           for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
                           ga[i * k + p] += acc;
                         }
                       }
                     }
                     if (bi->requires_grad) {
                       auto& gb = grad_buffer(*bi);
                       const auto& A = ai->data;
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t p = 0; p < k; ++p) {
                           const double aip = A[i * k + p];
                           if (aip == 0.0) continue;
                           for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * G[i * n + j];
                         }
                       }
                     }
                   });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto out = new_impl({c, r});
  const auto& src = a.impl()->data;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out->data[j * r + i] = src[i * c + j];
  ImplPtr ai = a.impl();
  return finish_op(out, should_record({&a}), "transpose", [ai, r, c](const TensorImpl& o) {
    auto& ga = grad_buffer(*ai);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += o.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  require(a.defined(), "reshape: undefined operand");
  require(shape_numel(shape) == a.numel(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  for (std::size_t e : shape) require(e > 0, "reshape: zero extent");
  auto out = new_impl(shape, a.impl()->data);
  ImplPtr ai = a.impl();
  return finish_op(out, should_record({&a}), "reshape", [ai](const TensorImpl& o) {
    auto& ga = grad_buffer(*ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows: no operands");
  Shape trailing(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  bool rec = false;
  for (const Tensor& p : parts) {
    require(p.defined() && p.rank() >= 1, "concat_rows: undefined or scalar operand");
    require(Shape(p.shape().begin() + 1, p.shape().end()) == trailing,
            "concat_rows: trailing extents differ");
    rows += p.dim(0);
    rec = rec || should_record({&p});
  }
  Shape out_shape = parts[0].shape();
  out_shape[0] = rows;
  std::vector<double> data;
  data.reserve(shape_numel(out_shape));
  std::vector<ImplPtr> inputs;
  for (const Tensor& p : parts) {
    data.insert(data.end(), p.data().begin(), p.data().end());
    inputs.push_back(p.impl());
  }
  auto out = new_impl(out_shape, std::move(data));
  return finish_op(out, rec, "concat_rows", [inputs](const TensorImpl& o) {
    std::size_t offset = 0;
    for (const auto& in : inputs) {
      const std::size_t n = in->data.size();
      if (in->requires_grad) {
        auto& g = grad_buffer(*in);
        for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[offset + i];
      }
      offset += n;
    }
  });
}

Tensor concat_rows(std::initializer_list<Tensor> parts) {
  return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor concat_cols(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_cols: no operands");
  const std::size_t rows = parts[0].dim(0);
  std::size_t cols = 0;
  bool rec = false;
  std::vector<ImplPtr> inputs;
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_cols");
    require(p.dim(0) == rows, "concat_cols: row counts differ");
    cols += p.dim(1);
    widths.push_back(p.dim(1));
    inputs.push_back(p.impl());
    rec = rec || should_record({&p});
  }
  auto out = new_impl({rows, cols});
  std::size_t col0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = inputs[k]->data;
    const std::size_t w = widths[k];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) out->data[r * cols + col0 + c] = src[r * w + c];
    col0 += w;
  }
  return finish_op(out, rec, "concat_cols", [inputs, widths, rows, cols](const TensorImpl& o) {
    std::size_t col0 = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const std::size_t w = widths[k];
      if (inputs[k]->requires_grad) {
        auto& g = grad_buffer(*inputs[k]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) g[r * w + c] += o.grad[r * cols + col0 + c];
      }
      col0 += w;
    }
  });
}

Tensor concat_cols(std::initializer_list<Tensor> parts) {
  return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_cols");
  require(begin < end && end <= a.dim(1), "slice_cols: invalid column range");
  const std::size_t rows = a.dim(0), cols = a.dim(1), w = end - begin;
  auto out = new_impl({rows, w});
  const auto& src = a.impl()->data;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out->data[r * w + c] = src[r * cols + begin + c];
  ImplPtr ai = a.impl();
  return finish_op(out, should_record({&a}), "slice_cols",
                   [ai, rows, cols, w, begin](const TensorImpl& o) {
                     auto& g = grad_buffer(*ai);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t c = 0; c < w; ++c)
                         g[r * cols + begin + c] += o.grad[r * w + c];
                   });
}

Tensor log_softmax_rows(const Tensor& a) {
  require_rank(a, 2, "log_softmax_rows");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  auto out = new_impl(a.shape());
  const auto& x = a.impl()->data;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &x[r * cols];
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out->data[r * cols + c] = row[c] - lse;
  }
  ImplPtr ai = a.impl();
  return finish_op(out, should_record({&a}), "log_softmax_rows",
                   [ai, rows, cols](const TensorImpl& o) {
                     auto& g = grad_buffer(*ai);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double gsum = 0.0;
                       for (std::size_t c = 0; c < cols; ++c) gsum += o.grad[r * cols + c];
                       for (std::size_t c = 0; c < cols; ++c) {
                         const double p = std::exp(o.data[r * cols + c]);
                         g[r * cols + c] += o.grad[r * cols + c] - p * gsum;
                       }
                     }
                   });
}

// ---------------------------------------------------------------------------
// Spatial ops

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = weight.dim(0), K = weight.dim(2);
  require(weight.dim(1) == C, "conv2d: channel mismatch");
  require(weight.dim(3) == K, "conv2d: kernel must be square");
  require(stride >= 1, "conv2d: stride must be positive");
  require(H + 2 * padding >= K && W + 2 * padding >= K, "conv2d: input smaller than kernel");
  if (bias.defined()) require(bias.numel() == O, "conv2d: bias length mismatch");
  const std::size_t Ho = (H + 2 * padding - K) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - K) / stride + 1;
  auto out = new_impl({O, Ho, Wo});
  const auto& X = x.impl()->data;
  const auto& Wt = weight.impl()->data;
  auto& Y = out->data;
  const long pad = static_cast<long>(padding);
  for (std::size_t o = 0; o < O; ++o) {
    double* yo = &Y[o * Ho * Wo];
    if (bias.defined()) std::fill(yo, yo + Ho * Wo, bias.data()[o]);
    for (std::size_t c = 0; c < C; ++c) {
      const double* xc = &X[c * H * W];
      for (std::size_t ki = 0; ki < K; ++ki) {
        for (std::size_t kj = 0; kj < K; ++kj) {
          const double w = Wt[((o * C + c) * K + ki) * K + kj];
          for (std::size_t i = 0; i < Ho; ++i) {
            const long yi = static_cast<long>(i * stride + ki) - pad;
            if (yi < 0 || yi >= static_cast<long>(H)) continue;
            const double* xrow = xc + yi * static_cast<long>(W);
            double* yrow = yo + i * Wo;
            for (std::size_t j = 0; j < Wo; ++j) {
              const long xj = static_cast<long>(j * stride + kj) - pad;
              if (xj < 0 || xj >= static_cast<long>(W)) continue;
              yrow[j] += w * xrow[xj];
            }
          }
        }
      }
    }
  }
  ImplPtr xi = x.impl(), wi = weight.impl();
  ImplPtr bi = bias.defined() ? bias.impl() : nullptr;
  const bool rec = should_record({&x, &weight, bias.defined() ? &bias : nullptr});
  return finish_op(out, rec, "conv2d", [=](const TensorImpl& o) {
    const auto& G = o.grad;
    const auto& X = xi->data;
    const auto& Wt = wi->data;
    if (bi && bi->requires_grad) {
      auto& gb = grad_buffer(*bi);
      for (std::size_t oc = 0; oc < O; ++oc)
        for (std::size_t p = 0; p < Ho * Wo; ++p) gb[oc] += G[oc * Ho * Wo + p];
    }
    double* gx = xi->requires_grad ? grad_buffer(*xi).data() : nullptr;
    double* gw = wi->requires_grad ? grad_buffer(*wi).data() : nullptr;
    for (std::size_t oc = 0; oc < O; ++oc) {
      const double* go = &G[oc * Ho * Wo];
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ki = 0; ki < K; ++ki) {
          for (std::size_t kj = 0; kj < K; ++kj) {
            const std::size_t widx = ((oc * C + c) * K + ki) * K + kj;
            const double w = Wt[widx];
            double wacc = 0.0;
            for (std::size_t i = 0; i < Ho; ++i) {
              const long yi = static_cast<long>(i * stride + ki) - pad;
              if (yi < 0 || yi >= static_cast<long>(H)) continue;
              const std::size_t xrow = c * H * W + static_cast<std::size_t>(yi) * W;
              for (std::size_t j = 0; j < Wo; ++j) {
                const long xj = static_cast<long>(j * stride + kj) - pad;
                if (xj < 0 || xj >= static_cast<long>(W)) continue;
                const double g = go[i * Wo + j];
                wacc += g * X[xrow + static_cast<std::size_t>(xj)];
                if (gx) gx[xrow + static_cast<std::size_t>(xj)] += g * w;
              }
            }
            if (gw) gw[widx] += wacc;
          }
        }
      }
    }
  });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride) {
  require_rank(x, 3, "conv_transpose2d");
  require_rank(weight, 4, "conv_transpose2d weight");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = weight.dim(1), K = weight.dim(2);
  require(weight.dim(0) == C, "conv_transpose2d: channel mismatch");
  require(weight.dim(3) == K, "conv_transpose2d: kernel must be square");
  require(stride >= 1, "conv_transpose2d: stride must be positive");
  if (bias.defined()) require(bias.numel() == O, "conv_transpose2d: bias length mismatch");
  const std::size_t Ho = (H - 1) * stride + K;
  const std::size_t Wo = (W - 1) * stride + K;
  auto out = new_impl({O, Ho, Wo});
  const auto& X = x.impl()->data;
  const auto& Wt = weight.impl()->data;
  auto& Y = out->data;
  for (std::size_t o = 0; o < O; ++o) {
    if (bias.defined()) std::fill(&Y[o * Ho * Wo], &Y[o * Ho * Wo] + Ho * Wo, bias.data()[o]);
  }
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t o = 0; o < O; ++o) {
      for (std::size_t ki = 0; ki < K; ++ki) {
        for (std::size_t kj = 0; kj < K; ++kj) {
          const double w = Wt[((c * O + o) * K + ki) * K + kj];
          for (std::size_t i = 0; i < H; ++i) {
            const double* xrow = &X[(c * H + i) * W];
            double* yrow = &Y[(o * Ho + i * stride + ki) * Wo + kj];
            for (std::size_t j = 0; j < W; ++j) yrow[j * stride] += w * xrow[j];
          }
        }
      }
    }
  }
  ImplPtr xi = x.impl(), wi = weight.impl();
  ImplPtr bi = bias.defined() ? bias.impl() : nullptr;
  const bool rec = should_record({&x, &weight, bias.defined() ? &bias : nullptr});
  return finish_op(out, rec, "conv_transpose2d", [=](const TensorImpl& o) {
    const auto& G = o.grad;
    const auto& X = xi->data;
    const auto& Wt = wi->data;
    if (bi && bi->requires_grad) {
      auto& gb = grad_buffer(*bi);
      for (std::size_t oc = 0; oc < O; ++oc)
        for (std::size_t p = 0; p < Ho * Wo; ++p) gb[oc] += G[oc * Ho * Wo + p];
    }
    double* gx = xi->requires_grad ? grad_buffer(*xi).data() : nullptr;
    double* gw = wi->requires_grad ? grad_buffer(*wi).data() : nullptr;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t oc = 0; oc < O; ++oc) {
        for (std::size_t ki = 0; ki < K; ++ki) {
          for (std::size_t kj = 0; kj < K; ++kj) {
            const std::size_t widx = ((c * O + oc) * K + ki) * K + kj;
            const double w = Wt[widx];
            double wacc = 0.0;
            for (std::size_t i = 0; i < H; ++i) {
              const double* grow = &G[(oc * Ho + i * stride + ki) * Wo + kj];
              const std::size_t xrow = (c * H + i) * W;
              for (std::size_t j = 0; j < W; ++j) {
                const double g = grow[j * stride];
                wacc += g * X[xrow + j];
                if (gx) gx[xrow + j] += g * w;
              }
            }
            if (gw) gw[widx] += wacc;
          }
        }
      }
    }
  });
}

Tensor avg_pool2d(const Tensor& x, std::size_t k) {
  require_rank(x, 3, "avg_pool2d");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  require(k >= 1 && H % k == 0 && W % k == 0, "avg_pool2d: extents not divisible by window");
  const std::size_t Ho = H / k, Wo = W / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  auto out = new_impl({C, Ho, Wo});
  const auto& X = x.impl()->data;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        out->data[(c * Ho + i / k) * Wo + j / k] += X[(c * H + i) * W + j] * inv;
  ImplPtr xi = x.impl();
  return finish_op(out, should_record({&x}), "avg_pool2d",
                   [xi, C, H, W, Ho, Wo, k, inv](const TensorImpl& o) {
                     auto& g = grad_buffer(*xi);
                     for (std::size_t c = 0; c < C; ++c)
                       for (std::size_t i = 0; i < H; ++i)
                         for (std::size_t j = 0; j < W; ++j)
                           g[(c * H + i) * W + j] += o.grad[(c * Ho + i / k) * Wo + j / k] * inv;
                   });
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double src = (in == 1 || out == 1)
                           ? 0.0
                           : static_cast<double>(i) * static_cast<double>(in - 1) /
                                 static_cast<double>(out - 1);
    const auto lo = std::min(static_cast<std::size_t>(std::floor(src)), in - 1);
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 3, "resize_bilinear");
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: zero-sized output");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const auto ty = bilinear_taps(H, out_h);
  const auto tx = bilinear_taps(W, out_w);
  auto out = new_impl({C, out_h, out_w});
  const auto& X = x.impl()->data;
  for (std::size_t c = 0; c < C; ++c) {
    const double* xc = &X[c * H * W];
    for (std::size_t i = 0; i < out_h; ++i) {
      const Tap& a = ty[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const Tap& b = tx[j];
        const double top = xc[a.lo * W + b.lo] * (1 - b.frac) + xc[a.lo * W + b.hi] * b.frac;
        const double bot = xc[a.hi * W + b.lo] * (1 - b.frac) + xc[a.hi * W + b.hi] * b.frac;
        out->data[(c * out_h + i) * out_w + j] = top * (1 - a.frac) + bot * a.frac;
      }
    }
  }
  ImplPtr xi = x.impl();
  return finish_op(out, should_record({&x}), "resize_bilinear",
                   [xi, ty, tx, C, H, W, out_h, out_w](const TensorImpl& o) {
                     auto& g = grad_buffer(*xi);
                     for (std::size_t c = 0; c < C; ++c) {
                       double* gc = &g[c * H * W];
                       for (std::size_t i = 0; i < out_h; ++i) {
                         const Tap& a = ty[i];
                         for (std::size_t j = 0; j < out_w; ++j) {
                           const Tap& b = tx[j];
                           const double go = o.grad[(c * out_h + i) * out_w + j];
                           gc[a.lo * W + b.lo] += go * (1 - a.frac) * (1 - b.frac);
                           gc[a.lo * W + b.hi] += go * (1 - a.frac) * b.frac;
                           gc[a.hi * W + b.lo] += go * a.frac * (1 - b.frac);
                           gc[a.hi * W + b.hi] += go * a.frac * b.frac;
                         }
                       }
                     }
                   });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 3, "global_avg_pool");
  const std::size_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
  const double inv = 1.0 / static_cast<double>(HW);
  auto out = new_impl({1, C});
  const auto& X = x.impl()->data;
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (std::size_t p = 0; p < HW; ++p) acc += X[c * HW + p];
    out->data[c] = acc * inv;
  }
  ImplPtr xi = x.impl();
  return finish_op(out, should_record({&x}), "global_avg_pool",
                   [xi, C, HW, inv](const TensorImpl& o) {
                     auto& g = grad_buffer(*xi);
                     for (std::size_t c = 0; c < C; ++c)
                       for (std::size_t p = 0; p < HW; ++p) g[c * HW + p] += o.grad[c] * inv;
                   });
}

// ---------------------------------------------------------------------------

namespace {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

void check_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw DomainError("grad_check: eps must lie in [1e-7, 1e-3]");
  }
}

double evaluate_scalar(const Tensor& y) {
  if (!y.defined() || y.numel() != 1) throw ShapeError("grad_check: function is not scalar");
  return y.item();
}

}  // namespace

double grad_check(const ScalarFunction& f, const Tensor& x, double eps) {
  check_eps(eps);
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  Tape tape;
  Tensor y;
  {
    TapeScope scope(tape);
    y = f(probe);
  }
  evaluate_scalar(y);
  tape.backward(y);
  std::vector<double> analytic(probe.numel(), 0.0);
  if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

  double worst = 0.0;
  for (std::size_t i = 0; i < probe.numel(); ++i) {
    Tensor plus = x.detach();
    Tensor minus = x.detach();
    plus.mutable_data()[i] += eps;
    minus.mutable_data()[i] -= eps;
    const double numeric = (evaluate_scalar(f(plus)) - evaluate_scalar(f(minus))) / (2 * eps);
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

double grad_check_params(const std::function<Tensor()>& f, std::span<const Tensor> params,
                         double eps) {
  check_eps(eps);
  for (Tensor p : params) p.zero_grad();
  Tape tape;
  Tensor y;
  {
    TapeScope scope(tape);
    y = f();
  }
  evaluate_scalar(y);
  tape.backward(y);

  double worst = 0.0;
  for (Tensor p : params) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate_scalar(f());
      values[i] = saved - eps;
      const double down = evaluate_scalar(f());
      values[i] = saved;
      worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * eps)));
    }
  }
  return worst;
}

}  // namespace lgdg
