#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "otnas/errors.hpp"
#include "otnas/types.hpp"

namespace otnas {

// Candidate operations of a cell edge. All of them preserve B x C x H x W.
enum class OpKind : std::uint8_t {
  zero,
  skip_connect,
  conv_3x3,
  conv_1x1,
  avg_pool_3x3,
  max_pool_3x3,
};

constexpr bool has_params(OpKind kind) {
  return kind == OpKind::conv_3x3 || kind == OpKind::conv_1x1;
}

constexpr int kernel_size(OpKind kind) {
  switch (kind) {
    case OpKind::conv_3x3:
    case OpKind::avg_pool_3x3:
    case OpKind::max_pool_3x3:
      return 3;
    case OpKind::conv_1x1:
      return 1;
    default:
      return 0;
  }
}

std::string_view to_string(OpKind kind);
OpKind op_from_string(std::string_view name);
std::vector<OpKind> default_op_corpus();

template <typename Scalar>
class BasicTensor {
 public:
  using Shape = std::vector<Index>;
  using Array = ArrayX<Scalar>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape)
      : shape_(std::move(shape)), data_(Array::Zero(numel(shape_))) {}

  BasicTensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape volume " + std::to_string(numel(shape_)));
    }
  }

  static BasicTensor zeros_like(const BasicTensor& other) { return BasicTensor(other.shape_); }

  static Index numel(const Shape& shape) {
    if (shape.empty()) return 0;
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  bool same_shape(const BasicTensor& other) const { return shape_ == other.shape_; }

  void set_zero() { data_.setZero(); }

 private:
  Shape shape_;
  Array data_;
};

// A trainable tensor with its gradient and lazily-allocated optimizer slots.
template <typename Scalar>
struct BasicParameter {
  BasicTensor<Scalar> value;
  BasicTensor<Scalar> grad;
  BasicTensor<Scalar> momentum;       // SGD velocity or Adam first moment
  BasicTensor<Scalar> second_moment;  // Adam only
  std::int64_t adam_steps = 0;

  BasicParameter() = default;
  explicit BasicParameter(BasicTensor<Scalar> initial)
      : value(std::move(initial)), grad(BasicTensor<Scalar>::zeros_like(value)) {}

  bool empty() const { return value.empty(); }
  void zero_grad() { grad.set_zero(); }
  void reset_optimizer() {
    momentum = {};
    second_moment = {};
    adam_steps = 0;
  }
};

using Tensor = BasicTensor<double>;
using Parameter = BasicParameter<double>;

template <typename Scalar>
struct OpGradients {
  BasicTensor<Scalar> input_grad;
  BasicTensor<Scalar> param_grad;  // empty for parameter-free ops
};

namespace detail {

template <typename Scalar>
void check_nchw(const BasicTensor<Scalar>& x, const char* what) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(what) + ": expected a B x C x H x W tensor");
  }
}

template <typename Scalar>
void check_conv_weight(OpKind kind, const BasicTensor<Scalar>& input, const BasicTensor<Scalar>* weight) {
  if (weight == nullptr || weight->rank() != 4) {
    throw ShapeError(std::string(to_string(kind)) + " requires a C_out x C_in x k x k weight");
  }
  const Index k = kernel_size(kind);
  if (weight->dim(1) != input.dim(1) || weight->dim(2) != k || weight->dim(3) != k) {
    throw ShapeError(std::string(to_string(kind)) + ": weight shape does not match input channels / kernel");
  }
}

// Column matrix (H*W) x (C_in*k*k) of the ReLU'd, zero-padded neighbourhoods of one sample.
template <typename Scalar>
void im2col_relu(const Scalar* sample, Index channels, Index height, Index width, Index k,
                 MatrixX<Scalar>& cols) {
  const Index pad = k / 2;
  const Index hw = height * width;
  cols.resize(hw, channels * k * k);
  for (Index c = 0; c < channels; ++c) {
    const Scalar* plane = sample + c * hw;
    for (Index u = 0; u < k; ++u) {
      for (Index v = 0; v < k; ++v) {
        Scalar* col = cols.col((c * k + u) * k + v).data();
        for (Index y = 0; y < height; ++y) {
          const Index sy = y + u - pad;
          for (Index x = 0; x < width; ++x) {
            const Index sx = x + v - pad;
            Scalar value = 0;
            if (sy >= 0 && sy < height && sx >= 0 && sx < width) {
              value = std::max(plane[sy * width + sx], Scalar(0));
            }
            col[y * width + x] = value;
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_masked(const MatrixX<Scalar>& dcols, const Scalar* sample, Index channels, Index height,
                   Index width, Index k, Scalar* dsample) {
  const Index pad = k / 2;
  const Index hw = height * width;
  for (Index c = 0; c < channels; ++c) {
    const Scalar* plane = sample + c * hw;
    Scalar* dplane = dsample + c * hw;
    for (Index u = 0; u < k; ++u) {
      for (Index v = 0; v < k; ++v) {
        const Scalar* col = dcols.col((c * k + u) * k + v).data();
        for (Index y = 0; y < height; ++y) {
          const Index sy = y + u - pad;
          if (sy < 0 || sy >= height) continue;
          for (Index x = 0; x < width; ++x) {
            const Index sx = x + v - pad;
            if (sx < 0 || sx >= width) continue;
            if (plane[sy * width + sx] > Scalar(0)) dplane[sy * width + sx] += col[y * width + x];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void conv_forward(OpKind kind, const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weight,
                  BasicTensor<Scalar>& out) {
  const Index batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index cout = weight.dim(0);
  const Index k = kernel_size(kind);
  const Index hw = h * w;
  out = BasicTensor<Scalar>({batch, cout, h, w});
  Eigen::Map<const MatrixX<Scalar>> wm(weight.data(), cin * k * k, cout);
  MatrixX<Scalar> cols;
  for (Index b = 0; b < batch; ++b) {
    Eigen::Map<MatrixX<Scalar>> yb(out.data() + b * cout * hw, hw, cout);
    const Scalar* xb = input.data() + b * cin * hw;
    if (k == 1) {
      Eigen::Map<const MatrixX<Scalar>> xm(xb, hw, cin);
      yb.noalias() = xm.cwiseMax(Scalar(0)) * wm;
    } else {
      im2col_relu(xb, cin, h, w, k, cols);
      yb.noalias() = cols * wm;
    }
  }
}

template <typename Scalar>
void conv_backward(OpKind kind, const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weight,
                   const BasicTensor<Scalar>& upstream, Scalar scale, BasicTensor<Scalar>* input_grad,
                   BasicTensor<Scalar>* param_grad) {
  const Index batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index cout = weight.dim(0);
  const Index k = kernel_size(kind);
  const Index hw = h * w;
  const Index rows = cin * k * k;
  Eigen::Map<const MatrixX<Scalar>> wm(weight.data(), rows, cout);
  MatrixX<Scalar> cols;
  MatrixX<Scalar> dcols;
  for (Index b = 0; b < batch; ++b) {
    Eigen::Map<const MatrixX<Scalar>> gb(upstream.data() + b * cout * hw, hw, cout);
    const Scalar* xb = input.data() + b * cin * hw;
    if (k == 1) {
      Eigen::Map<const MatrixX<Scalar>> xm(xb, hw, cin);
      if (param_grad != nullptr) {
        Eigen::Map<MatrixX<Scalar>> dw(param_grad->data(), rows, cout);
        dw.noalias() += scale * (xm.cwiseMax(Scalar(0)).transpose() * gb);
      }
      if (input_grad != nullptr) {
        Eigen::Map<MatrixX<Scalar>> dx(input_grad->data() + b * cin * hw, hw, cin);
        dcols.noalias() = scale * (gb * wm.transpose());
        dx.array() += (xm.array() > Scalar(0)).select(dcols.array(), Scalar(0));
      }
    } else {
      if (param_grad != nullptr) {
        im2col_relu(xb, cin, h, w, k, cols);
        Eigen::Map<MatrixX<Scalar>> dw(param_grad->data(), rows, cout);
        dw.noalias() += scale * (cols.transpose() * gb);
      }
      if (input_grad != nullptr) {
        dcols.noalias() = scale * (gb * wm.transpose());
        col2im_masked(dcols, xb, cin, h, w, k, input_grad->data() + b * cin * hw);
      }
    }
  }
}

template <typename Scalar>
void avg_pool_forward(const BasicTensor<Scalar>& input, BasicTensor<Scalar>& out) {
  const Index planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  out = BasicTensor<Scalar>(input.shape());
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = input.data() + p * h * w;
    Scalar* dst = out.data() + p * h * w;
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        Scalar acc = 0;
        for (Index sy = std::max<Index>(y - 1, 0); sy <= std::min(y + 1, h - 1); ++sy) {
          for (Index sx = std::max<Index>(x - 1, 0); sx <= std::min(x + 1, w - 1); ++sx) {
            acc += src[sy * w + sx];
          }
        }
        dst[y * w + x] = acc / Scalar(9);
      }
    }
  }
}

template <typename Scalar>
void avg_pool_backward(const BasicTensor<Scalar>& upstream, Scalar scale, BasicTensor<Scalar>& input_grad) {
  const Index planes = upstream.dim(0) * upstream.dim(1), h = upstream.dim(2), w = upstream.dim(3);
  const Scalar factor = scale / Scalar(9);
  for (Index p = 0; p < planes; ++p) {
    const Scalar* g = upstream.data() + p * h * w;
    Scalar* dst = input_grad.data() + p * h * w;
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const Scalar share = factor * g[y * w + x];
        for (Index sy = std::max<Index>(y - 1, 0); sy <= std::min(y + 1, h - 1); ++sy) {
          for (Index sx = std::max<Index>(x - 1, 0); sx <= std::min(x + 1, w - 1); ++sx) {
            dst[sy * w + sx] += share;
          }
        }
      }
    }
  }
}

// Index (within the plane) of the window maximum; ties resolve to the lowest index.
template <typename Scalar>
Index max_pool_argmax(const Scalar* src, Index h, Index w, Index y, Index x) {
  Index best = -1;
  Scalar best_value = -std::numeric_limits<Scalar>::infinity();
  for (Index sy = std::max<Index>(y - 1, 0); sy <= std::min(y + 1, h - 1); ++sy) {
    for (Index sx = std::max<Index>(x - 1, 0); sx <= std::min(x + 1, w - 1); ++sx) {
      const Scalar v = src[sy * w + sx];
      if (best < 0 || v > best_value) {
        best = sy * w + sx;
        best_value = v;
      }
    }
  }
  return best;
}

template <typename Scalar>
void max_pool_forward(const BasicTensor<Scalar>& input, BasicTensor<Scalar>& out) {
  const Index planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  out = BasicTensor<Scalar>(input.shape());
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = input.data() + p * h * w;
    Scalar* dst = out.data() + p * h * w;
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) dst[y * w + x] = src[max_pool_argmax(src, h, w, y, x)];
    }
  }
}

template <typename Scalar>
void max_pool_backward(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& upstream, Scalar scale,
                       BasicTensor<Scalar>& input_grad) {
  const Index planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = input.data() + p * h * w;
    const Scalar* g = upstream.data() + p * h * w;
    Scalar* dst = input_grad.data() + p * h * w;
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) dst[max_pool_argmax(src, h, w, y, x)] += scale * g[y * w + x];
    }
  }
}

}  // namespace detail

/// Applies one candidate operation. Conv kinds apply ReLU first and use
/// stride 1 with same-padding; `weight` must be non-null for them.
template <typename Scalar>
BasicTensor<Scalar> op_forward(OpKind kind, const BasicTensor<Scalar>& input,
                               const std::type_identity_t<BasicTensor<Scalar>>* weight = nullptr) {
  detail::check_nchw(input, "op_forward");
  BasicTensor<Scalar> out;
  switch (kind) {
    case OpKind::zero:
      return BasicTensor<Scalar>(input.shape());
    case OpKind::skip_connect:
      return input;
    case OpKind::conv_3x3:
    case OpKind::conv_1x1:
      detail::check_conv_weight(kind, input, weight);
      detail::conv_forward(kind, input, *weight, out);
      return out;
    case OpKind::avg_pool_3x3:
      detail::avg_pool_forward(input, out);
      return out;
    case OpKind::max_pool_3x3:
      detail::max_pool_forward(input, out);
      return out;
  }
  throw ShapeError("unknown op kind");
}

/// Accumulates scale * (d op / d input)^T upstream into `input_grad` and the
/// weight gradient into `param_grad`. Either output may be null.
template <typename Scalar>
void op_backward_accumulate(OpKind kind, const BasicTensor<Scalar>& input,
                            const std::type_identity_t<BasicTensor<Scalar>>* weight,
                            const BasicTensor<Scalar>& upstream, std::type_identity_t<Scalar> scale,
                            std::type_identity_t<BasicTensor<Scalar>>* input_grad,
                            std::type_identity_t<BasicTensor<Scalar>>* param_grad) {
  detail::check_nchw(input, "op_backward");
  if (!has_params(kind) && !upstream.same_shape(input)) {
    throw ShapeError(std::string(to_string(kind)) + ": upstream gradient shape differs from input");
  }
  switch (kind) {
    case OpKind::zero:
      return;
    case OpKind::skip_connect:
      if (input_grad != nullptr) input_grad->array() += scale * upstream.array();
      return;
    case OpKind::conv_3x3:
    case OpKind::conv_1x1:
      detail::check_conv_weight(kind, input, weight);
      if (upstream.rank() != 4 || upstream.dim(0) != input.dim(0) || upstream.dim(1) != weight->dim(0) ||
          upstream.dim(2) != input.dim(2) || upstream.dim(3) != input.dim(3)) {
        throw ShapeError(std::string(to_string(kind)) + ": upstream gradient shape mismatch");
      }
      detail::conv_backward(kind, input, *weight, upstream, scale, input_grad, param_grad);
      return;
    case OpKind::avg_pool_3x3:
      if (input_grad != nullptr) detail::avg_pool_backward(upstream, scale, *input_grad);
      return;
    case OpKind::max_pool_3x3:
      if (input_grad != nullptr) detail::max_pool_backward(input, upstream, scale, *input_grad);
      return;
  }
}

template <typename Scalar>
OpGradients<Scalar> op_backward(OpKind kind, const BasicTensor<Scalar>& input,
                                const std::type_identity_t<BasicTensor<Scalar>>* weight,
                                const BasicTensor<Scalar>& upstream) {
  OpGradients<Scalar> grads{BasicTensor<Scalar>::zeros_like(input), {}};
  BasicTensor<Scalar>* param_grad = nullptr;
  if (has_params(kind)) {
    detail::check_conv_weight(kind, input, weight);
    grads.param_grad = BasicTensor<Scalar>::zeros_like(*weight);
    param_grad = &grads.param_grad;
  }
  op_backward_accumulate(kind, input, weight, upstream, Scalar(1), &grads.input_grad, param_grad);
  return grads;
}

template <typename Scalar>
struct LossResult {
  Scalar loss = 0;
  BasicTensor<Scalar> logit_grad;
};

/// Mean negative log-softmax of the true class over a B x K logit tensor.
template <typename Scalar>
LossResult<Scalar> softmax_cross_entropy(const BasicTensor<Scalar>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be B x K");
  const Index batch = logits.dim(0), classes = logits.dim(1);
  if (static_cast<Index>(labels.size()) != batch) throw ShapeError("softmax_cross_entropy: label count != batch");
  if (batch == 0) throw PreconditionError("softmax_cross_entropy: empty batch");
  LossResult<Scalar> result{0, BasicTensor<Scalar>(logits.shape())};
  Eigen::Map<const RowMatrixX<Scalar>> z(logits.data(), batch, classes);
  Eigen::Map<RowMatrixX<Scalar>> g(result.logit_grad.data(), batch, classes);
  for (Index b = 0; b < batch; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= classes) {
      throw PreconditionError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
    const Scalar peak = z.row(b).maxCoeff();
    const auto shifted = (z.row(b).array() - peak).eval();
    const Scalar log_norm = std::log(shifted.exp().sum());
    result.loss -= shifted(y) - log_norm;
    g.row(b) = (shifted - log_norm).exp().matrix();
    g(b, y) -= Scalar(1);
  }
  result.loss /= Scalar(batch);
  g /= Scalar(batch);
  return result;
}

/// Momentum SGD with coupled L2 weight decay: v = mu v + (g + wd x); x -= lr v.
template <typename Scalar>
void sgd_step(BasicParameter<Scalar>& p, Scalar lr, Scalar momentum, Scalar weight_decay) {
  if (!p.grad.same_shape(p.value)) throw ShapeError("sgd_step: grad/value shape mismatch");
  if (p.momentum.empty()) p.momentum = BasicTensor<Scalar>::zeros_like(p.value);
  p.momentum.array() = momentum * p.momentum.array() + p.grad.array() + weight_decay * p.value.array();
  p.value.array() -= lr * p.momentum.array();
}

template <typename Scalar>
void adam_step(BasicParameter<Scalar>& p, Scalar lr, Scalar beta1, Scalar beta2, Scalar eps) {
  if (!p.grad.same_shape(p.value)) throw ShapeError("adam_step: grad/value shape mismatch");
  if (p.momentum.empty()) p.momentum = BasicTensor<Scalar>::zeros_like(p.value);
  if (p.second_moment.empty()) p.second_moment = BasicTensor<Scalar>::zeros_like(p.value);
  ++p.adam_steps;
  const auto t = static_cast<Scalar>(p.adam_steps);
  p.momentum.array() = beta1 * p.momentum.array() + (1 - beta1) * p.grad.array();
  p.second_moment.array() = beta2 * p.second_moment.array() + (1 - beta2) * p.grad.array().square();
  const Scalar c1 = 1 - std::pow(beta1, t);
  const Scalar c2 = 1 - std::pow(beta2, t);
  p.value.array() -= lr * (p.momentum.array() / c1) / ((p.second_moment.array() / c2).sqrt() + eps);
}

/// Maximum relative error between central differences of `f` and `analytic`
/// over the listed coordinates (all coordinates when `coords` is empty).
/// The denominator is max(1, |analytic_i|).
template <typename Scalar>
Scalar finite_diff_check(const std::function<Scalar(const BasicTensor<Scalar>&)>& f, const BasicTensor<Scalar>& x,
                         Scalar h, const BasicTensor<Scalar>& analytic, std::span<const Index> coords = {}) {
  if (!analytic.same_shape(x)) throw ShapeError("finite_diff_check: analytic gradient shape mismatch");
  std::vector<Index> all;
  if (coords.empty()) {
    all.resize(static_cast<std::size_t>(x.size()));
    std::iota(all.begin(), all.end(), Index{0});
    coords = all;
  }
  BasicTensor<Scalar> probe = x;
  Scalar worst = 0;
  for (const Index i : coords) {
    const Scalar original = probe[i];
    probe[i] = original + h;
    const Scalar up = f(probe);
    probe[i] = original - h;
    const Scalar down = f(probe);
    probe[i] = original;
    const Scalar numeric = (up - down) / (2 * h);
    const Scalar err = std::abs(numeric - analytic[i]) / std::max(Scalar(1), std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace otnas
