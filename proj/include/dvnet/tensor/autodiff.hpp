#pragma once

// Reverse-mode differentiation over Tensor. Operations append a backward
// closure to a Tape when one is supplied; passing a null tape evaluates the
// operation without recording anything (inference).

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dvnet/core/denormals.hpp"
#include "dvnet/core/error.hpp"
#include "dvnet/tensor/kernels.hpp"
#include "dvnet/tensor/tensor.hpp"

namespace dvnet {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;

  /// Gradient slot shaped like `value`, allocated as zeros on first use.
  Tensor<T>& grad_slot() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
  void zero_grad() {
    if (grad.shape() == value.shape())
      grad.fill(T{0});
    else
      grad = Tensor<T>(value.shape());
  }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

template <class T>
Var<T> parameter(Tensor<T> value) {
  auto n = constant(std::move(value));
  n->requires_grad = true;
  return n;
}

/// Ordered record of executed operations. backward() replays them in exact
/// reverse order; gradients of recorded intermediates are recomputed on every
/// call while leaf gradients accumulate.
template <class T>
class Tape {
 public:
  void record(const Var<T>& output, std::function<void()> backward_fn) {
    output->requires_grad = true;
    entries_.push_back({output, std::move(backward_fn)});
  }

  void backward(const Var<T>& loss) {
    FlushDenormals flush;
    require(loss && loss->value.numel() == 1, "backward",
            "loss must be a scalar, got shape " + (loss ? shape_str(loss->value.shape()) : std::string("null")));
    for (auto& e : entries_) e.output->grad = Tensor<T>();
    loss->grad_slot()[0] += T{1};
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      // an output that received no gradient contributes nothing upstream
      if (it->output->grad.shape() != it->output->value.shape()) continue;
      it->backward();
      if (release_intermediate_grads) it->output->grad = Tensor<T>();
    }
  }

  /// Frees each intermediate gradient once it has been propagated; leaf
  /// gradients are always kept.
  bool release_intermediate_grads = true;

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Var<T> output;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
};

namespace detail {

template <class T>
bool records(Tape<T>* tape, std::initializer_list<const Var<T>*> inputs) {
  if (!tape) return false;
  for (const auto* v : inputs)
    if (*v && (*v)->requires_grad) return true;
  return false;
}

template <class T>
bool wants_grad(const Var<T>& v) {
  return v && v->requires_grad;
}

}  // namespace detail

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// Convolution

struct ConvSpec {
  int stride = 1;
  int padding = 0;
  /// Extra trailing extent for transposed convolution (must be < stride).
  int output_padding = 0;
};

namespace detail {

template <class T>
void add_bias(Tensor<T>& out, const Tensor<T>& bias) {
  const auto n = out.batch(), c = out.channels(), v = out.spatial_size();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      T* p = out.data() + (b * c + ch) * v;
      const T bv = bias[ch];
      for (std::int64_t i = 0; i < v; ++i) p[i] += bv;
    }
}

template <class T>
void bias_grad(const Tensor<T>& out_grad, Tensor<T>& grad) {
  const auto n = out_grad.batch(), c = out_grad.channels(), v = out_grad.spatial_size();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* p = out_grad.data() + (b * c + ch) * v;
      T acc{0};
      for (std::int64_t i = 0; i < v; ++i) acc += p[i];
      grad[ch] += acc;
    }
}

inline void check_conv_ranks(const Shape& x, const Shape& w, const char* stage) {
  require(x.size() >= 3 && x.size() <= 5, stage,
          "input must be [batch, channels, spatial...] with 1-3 spatial axes, got " + shape_str(x));
  require(w.size() == x.size(), stage,
          "kernel rank " + std::to_string(w.size()) + " does not match input rank " + std::to_string(x.size()) +
              " (kernel " + shape_str(w) + ", input " + shape_str(x) + ")");
}

}  // namespace detail

/// Cross-correlation with kernel [out_channels, in_channels, k...] and optional
/// bias [out_channels].
template <class T>
Var<T> conv_nd(Tape<T>* tape, const Var<T>& x, const Var<T>& w, const Var<T>& bias, ConvSpec spec) {
  const Shape& xs = x->value.shape();
  const Shape& ws = w->value.shape();
  detail::check_conv_ranks(xs, ws, "conv_nd");
  require(ws[1] == xs[1], "conv_nd",
          "channel axis: kernel expects " + std::to_string(ws[1]) + " input channels, input has " +
              std::to_string(xs[1]));
  if (bias)
    require(bias->value.numel() == ws[0], "conv_nd", "bias length must equal output channels");
  const auto g = kernels::conv_geometry(spatial_shape(xs), spatial_shape(ws), spec.stride, spec.padding);
  Shape os{xs[0], ws[0]};
  for (auto e : kernels::out_spatial(g, xs.size() - 2)) os.push_back(e);

  auto out = constant(Tensor<T>::uninitialized(os));
  kernels::conv_forward(x->value.data(), xs[0], xs[1], w->value.data(), ws[0], g, out->value.data());
  if (bias) detail::add_bias(out->value, bias->value);

  if (detail::records(tape, {&x, &w, &bias})) {
    Node<T>* o = out.get();
    tape->record(out, [x, w, bias, o, g] {
      const Shape& xs = x->value.shape();
      const Shape& ws = w->value.shape();
      if (detail::wants_grad(x))
        kernels::conv_backward_input(o->grad.data(), xs[0], ws[0], w->value.data(), xs[1], g, x->grad_slot().data());
      if (detail::wants_grad(w))
        kernels::conv_backward_weight(x->value.data(), o->grad.data(), xs[0], xs[1], ws[0], g,
                                      w->grad_slot().data());
      if (detail::wants_grad(bias)) detail::bias_grad(o->grad, bias->grad_slot());
    });
  }
  return out;
}

/// Transposed convolution, the adjoint of conv_nd. Kernel is
/// [in_channels, out_channels, k...]; output extent per axis is
/// stride*(n-1) + k - 2*padding + output_padding.
template <class T>
Var<T> conv_transpose_nd(Tape<T>* tape, const Var<T>& x, const Var<T>& w, const Var<T>& bias, ConvSpec spec) {
  const Shape& xs = x->value.shape();
  const Shape& ws = w->value.shape();
  detail::check_conv_ranks(xs, ws, "conv_transpose_nd");
  require(ws[0] == xs[1], "conv_transpose_nd",
          "channel axis: kernel expects " + std::to_string(ws[0]) + " input channels, input has " +
              std::to_string(xs[1]));
  require(spec.output_padding >= 0 && spec.output_padding < spec.stride, "conv_transpose_nd",
          "output_padding must be in [0, stride)");
  if (bias)
    require(bias->value.numel() == ws[1], "conv_transpose_nd", "bias length must equal output channels");
  Shape out_sp;
  for (std::size_t a = 2; a < xs.size(); ++a) {
    const auto e = kernels::conv_transpose_out_extent(xs[a], ws[a], spec.stride, spec.padding, spec.output_padding);
    require(e >= 1, "conv_transpose_nd", "spatial axis " + std::to_string(a - 2) + " yields empty output");
    out_sp.push_back(e);
  }
  // Geometry of the conv whose adjoint this is: it maps out_sp -> input extents.
  auto g = kernels::conv_geometry(out_sp, spatial_shape(ws), spec.stride, spec.padding, "conv_transpose_nd");
  for (std::size_t a = 0; a < out_sp.size(); ++a)
    require(g.out[3 - out_sp.size() + a] == xs[a + 2], "conv_transpose_nd",
            "spatial axis " + std::to_string(a) + " is inconsistent with stride/padding");
  Shape os{xs[0], ws[1]};
  os.insert(os.end(), out_sp.begin(), out_sp.end());

  auto out = constant(Tensor<T>(os));
  kernels::conv_backward_input(x->value.data(), xs[0], xs[1], w->value.data(), ws[1], g, out->value.data());
  if (bias) detail::add_bias(out->value, bias->value);

  if (detail::records(tape, {&x, &w, &bias})) {
    Node<T>* o = out.get();
    tape->record(out, [x, w, bias, o, g] {
      const Shape& xs = x->value.shape();
      const Shape& ws = w->value.shape();
      if (detail::wants_grad(x)) {
        Tensor<T> tmp(xs);
        kernels::conv_forward(o->grad.data(), xs[0], ws[1], w->value.data(), xs[1], g, tmp.data());
        auto& gx = x->grad_slot();
        for (std::int64_t i = 0; i < tmp.numel(); ++i) gx[i] += tmp[i];
      }
      if (detail::wants_grad(w))
        kernels::conv_backward_weight(o->grad.data(), x->value.data(), xs[0], ws[1], xs[1], g,
                                      w->grad_slot().data());
      if (detail::wants_grad(bias)) detail::bias_grad(o->grad, bias->grad_slot());
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization

/// Running statistics of one batch-norm layer.
template <class T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  /// Number of train-mode batches seen; eval mode requires at least one.
  std::int64_t batches_seen = 0;
  T momentum = T(0.9);
  T epsilon = T(1e-5);

  BatchNormState() = default;
  explicit BatchNormState(std::int64_t channels)
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
};

namespace detail {

template <class T>
Var<T> batch_norm_impl(Tape<T>* tape, const Var<T>& x, const Var<T>& scale, const Var<T>& shift,
                       const BatchNormState<T>& state, Mode mode, BatchNormState<T>* update) {
  const Shape& xs = x->value.shape();
  require(xs.size() >= 3, "batch_norm", "input must be [batch, channels, spatial...]");
  const auto n = xs[0], c = xs[1], v = x->value.spatial_size();
  require(scale->value.numel() == c && shift->value.numel() == c, "batch_norm",
          "scale/shift length must equal channel extent " + std::to_string(c));
  require(state.running_mean.numel() == c, "batch_norm", "running statistics sized for a different channel count");
  require(mode == Mode::train || state.batches_seen > 0, "batch_norm",
          "eval mode requested before any train-mode batch (uninitialized running statistics)");

  const T eps = state.epsilon;
  Tensor<T> mean(Shape{c}), inv_std(Shape{c});
  const auto m = n * v;
  if (mode == Mode::train) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double sum = 0;
      for (std::int64_t b = 0; b < n; ++b) {
        const T* p = x->value.data() + (b * c + ch) * v;
        for (std::int64_t i = 0; i < v; ++i) sum += p[i];
      }
      const double mu = sum / static_cast<double>(m);
      double sq = 0;
      for (std::int64_t b = 0; b < n; ++b) {
        const T* p = x->value.data() + (b * c + ch) * v;
        for (std::int64_t i = 0; i < v; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(m);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + eps));
      const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
      update->running_mean[ch] =
          static_cast<T>(state.momentum * state.running_mean[ch] + (1 - state.momentum) * mu);
      update->running_var[ch] =
          static_cast<T>(state.momentum * state.running_var[ch] + (1 - state.momentum) * unbiased);
    }
    ++update->batches_seen;
  } else {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean[ch];
      inv_std[ch] = T{1} / std::sqrt(state.running_var[ch] + eps);
    }
  }

  auto out = constant(Tensor<T>::uninitialized(xs));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* p = x->value.data() + (b * c + ch) * v;
      T* q = out->value.data() + (b * c + ch) * v;
      const T a = scale->value[ch] * inv_std[ch];
      const T sh = shift->value[ch] - a * mean[ch];
      for (std::int64_t i = 0; i < v; ++i) q[i] = a * p[i] + sh;
    }

  if (detail::records(tape, {&x, &scale, &shift})) {
    Node<T>* o = out.get();
    tape->record(out, [x, scale, shift, o, mean, inv_std, mode] {
      const Shape& xs = x->value.shape();
      const auto n = xs[0], c = xs[1], v = x->value.spatial_size();
      const double m = static_cast<double>(n * v);
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double sum_dy = 0, sum_dy_xhat = 0;
        for (std::int64_t b = 0; b < n; ++b) {
          const T* p = x->value.data() + (b * c + ch) * v;
          const T* dy = o->grad.data() + (b * c + ch) * v;
          for (std::int64_t i = 0; i < v; ++i) {
            sum_dy += dy[i];
            sum_dy_xhat += static_cast<double>(dy[i]) * (p[i] - mean[ch]) * inv_std[ch];
          }
        }
        if (detail::wants_grad(scale)) scale->grad_slot()[ch] += static_cast<T>(sum_dy_xhat);
        if (detail::wants_grad(shift)) shift->grad_slot()[ch] += static_cast<T>(sum_dy);
        if (!detail::wants_grad(x)) continue;
        auto& gx = x->grad_slot();
        const T a = scale->value[ch] * inv_std[ch];
        for (std::int64_t b = 0; b < n; ++b) {
          const T* p = x->value.data() + (b * c + ch) * v;
          const T* dy = o->grad.data() + (b * c + ch) * v;
          T* g = gx.data() + (b * c + ch) * v;
          if (mode == Mode::eval) {
            for (std::int64_t i = 0; i < v; ++i) g[i] += a * dy[i];
          } else {
            const T mdy = static_cast<T>(sum_dy / m), mdx = static_cast<T>(sum_dy_xhat / m);
            for (std::int64_t i = 0; i < v; ++i) {
              const T xhat = (p[i] - mean[ch]) * inv_std[ch];
              g[i] += a * (dy[i] - mdy - xhat * mdx);
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace detail

/// Train mode normalizes with batch statistics and updates the running
/// statistics (momentum-weighted average); eval mode uses the running ones.
template <class T>
Var<T> batch_norm(Tape<T>* tape, const Var<T>& x, const Var<T>& scale, const Var<T>& shift,
                  BatchNormState<T>& state, Mode mode) {
  return detail::batch_norm_impl(tape, x, scale, shift, state, mode, mode == Mode::train ? &state : nullptr);
}

/// Read-only variant; only eval mode is possible without mutable statistics.
template <class T>
Var<T> batch_norm(Tape<T>* tape, const Var<T>& x, const Var<T>& scale, const Var<T>& shift,
                  const BatchNormState<T>& state, Mode mode) {
  require(mode == Mode::eval, "batch_norm", "train mode needs mutable running statistics");
  return detail::batch_norm_impl(tape, x, scale, shift, state, mode, static_cast<BatchNormState<T>*>(nullptr));
}

// ---------------------------------------------------------------------------
// Pointwise and structural operations

template <class T>
Var<T> relu(Tape<T>* tape, const Var<T>& x) {
  auto out = constant(Tensor<T>::uninitialized(x->value.shape()));
  const T* p = x->value.data();
  T* q = out->value.data();
  for (std::int64_t i = 0; i < x->value.numel(); ++i) q[i] = p[i] > T{0} ? p[i] : T{0};
  if (detail::records(tape, {&x})) {
    Node<T>* o = out.get();
    tape->record(out, [x, o] {
      T* gx = x->grad_slot().data();
      const T* xv = x->value.data();
      const T* go = o->grad.data();
      const auto count = x->value.numel();
      for (std::int64_t i = 0; i < count; ++i) gx[i] += xv[i] > T{0} ? go[i] : T{0};
    });
  }
  return out;
}

/// Average pooling with a cubic window; every spatial extent must be
/// divisible by the stride.
template <class T>
Var<T> avg_pool_nd(Tape<T>* tape, const Var<T>& x, int window, int stride) {
  const Shape& xs = x->value.shape();
  require(xs.size() >= 3 && xs.size() <= 5, "avg_pool_nd", "input must have 1-3 spatial axes");
  require(window >= 1 && stride >= 1, "avg_pool_nd", "window and stride must be positive");
  for (std::size_t a = 2; a < xs.size(); ++a) {
    require(window <= xs[a], "avg_pool_nd",
            "window " + std::to_string(window) + " exceeds spatial axis " + std::to_string(a - 2) + " extent " +
                std::to_string(xs[a]));
    require(xs[a] % stride == 0, "avg_pool_nd",
            "spatial axis " + std::to_string(a - 2) + " extent " + std::to_string(xs[a]) +
                " is not divisible by stride " + std::to_string(stride));
  }
  const auto g = kernels::conv_geometry(spatial_shape(xs), Shape(xs.size() - 2, window), stride, 0, "avg_pool_nd");
  Shape os{xs[0], xs[1]};
  for (auto e : kernels::out_spatial(g, xs.size() - 2)) os.push_back(e);
  auto out = constant(Tensor<T>::uninitialized(os));
  kernels::avg_pool_forward(x->value.data(), xs[0] * xs[1], g, out->value.data());
  if (detail::records(tape, {&x})) {
    Node<T>* o = out.get();
    tape->record(out, [x, o, g] {
      kernels::avg_pool_backward(o->grad.data(), x->value.batch() * x->value.channels(), g, x->grad_slot().data());
    });
  }
  return out;
}

/// Concatenates along the channel axis; a's channels come first.
template <class T>
Var<T> concat_channels(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
  const Shape& as = a->value.shape();
  const Shape& bs = b->value.shape();
  require(as.size() == bs.size() && as.size() >= 3, "concat_channels",
          "rank mismatch: " + shape_str(as) + " vs " + shape_str(bs));
  for (std::size_t i = 0; i < as.size(); ++i)
    if (i != 1)
      require(as[i] == bs[i], "concat_channels",
              "non-channel axis " + std::to_string(i) + " differs: " + shape_str(as) + " vs " + shape_str(bs));
  const auto n = as[0], ca = as[1], cb = bs[1], v = a->value.spatial_size();
  Shape os = as;
  os[1] = ca + cb;
  auto out = constant(Tensor<T>::uninitialized(os));
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(a->value.data() + i * ca * v, ca * v, out->value.data() + i * (ca + cb) * v);
    std::copy_n(b->value.data() + i * cb * v, cb * v, out->value.data() + (i * (ca + cb) + ca) * v);
  }
  if (detail::records(tape, {&a, &b})) {
    Node<T>* o = out.get();
    tape->record(out, [a, b, o, n, ca, cb, v] {
      for (std::int64_t i = 0; i < n; ++i) {
        const T* g = o->grad.data() + i * (ca + cb) * v;
        if (detail::wants_grad(a)) {
          T* ga = a->grad_slot().data() + i * ca * v;
          for (std::int64_t k = 0; k < ca * v; ++k) ga[k] += g[k];
        }
        if (detail::wants_grad(b)) {
          T* gb = b->grad_slot().data() + i * cb * v;
          for (std::int64_t k = 0; k < cb * v; ++k) gb[k] += g[ca * v + k];
        }
      }
    });
  }
  return out;
}

template <class T>
Var<T> slice_channels(Tape<T>* tape, const Var<T>& x, std::int64_t begin, std::int64_t count) {
  const Shape& xs = x->value.shape();
  require(begin >= 0 && count >= 0 && begin + count <= xs.at(1), "slice_channels", "channel range out of bounds");
  const auto n = xs[0], c = xs[1], v = x->value.spatial_size();
  Shape os = xs;
  os[1] = count;
  auto out = constant(Tensor<T>::uninitialized(os));
  for (std::int64_t i = 0; i < n; ++i)
    std::copy_n(x->value.data() + (i * c + begin) * v, count * v, out->value.data() + i * count * v);
  if (detail::records(tape, {&x})) {
    Node<T>* o = out.get();
    tape->record(out, [x, o, n, c, v, begin, count] {
      auto& gx = x->grad_slot();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t k = 0; k < count * v; ++k) gx[(i * c + begin) * v + k] += o->grad[i * count * v + k];
    });
  }
  return out;
}

/// Per-voxel softmax over the channel axis with max subtraction.
template <class T>
Var<T> softmax_channels(Tape<T>* tape, const Var<T>& logits) {
  const Shape& xs = logits->value.shape();
  require(xs.size() >= 3, "softmax_channels", "input must be [batch, channels, spatial...]");
  const auto n = xs[0], c = xs[1], v = logits->value.spatial_size();
  auto out = constant(Tensor<T>::uninitialized(xs));
  std::vector<T> buf(static_cast<std::size_t>(c));
  for (std::int64_t b = 0; b < n; ++b) {
    const T* p = logits->value.data() + b * c * v;
    T* q = out->value.data() + b * c * v;
    for (std::int64_t i = 0; i < v; ++i) {
      T mx = p[i];
      for (std::int64_t k = 1; k < c; ++k) mx = std::max(mx, p[k * v + i]);
      T sum{0};
      for (std::int64_t k = 0; k < c; ++k) {
        buf[k] = std::exp(p[k * v + i] - mx);
        sum += buf[k];
      }
      for (std::int64_t k = 0; k < c; ++k) q[k * v + i] = buf[k] / sum;
    }
  }
  if (detail::records(tape, {&logits})) {
    Node<T>* o = out.get();
    tape->record(out, [logits, o, n, c, v] {
      auto& gx = logits->grad_slot();
      for (std::int64_t b = 0; b < n; ++b) {
        const T* p = o->value.data() + b * c * v;
        const T* dy = o->grad.data() + b * c * v;
        T* g = gx.data() + b * c * v;
        for (std::int64_t i = 0; i < v; ++i) {
          T dot{0};
          for (std::int64_t k = 0; k < c; ++k) dot += p[k * v + i] * dy[k * v + i];
          for (std::int64_t k = 0; k < c; ++k) g[k * v + i] += p[k * v + i] * (dy[k * v + i] - dot);
        }
      }
    });
  }
  return out;
}

/// Inverted dropout: kept entries are scaled by 1/(1-rate).
template <class T>
Var<T> dropout(Tape<T>* tape, const Var<T>& x, double rate, std::mt19937_64& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout", "rate must be in [0, 1)");
  if (rate == 0.0) return x;
  auto mask = std::make_shared<Tensor<T>>(x->value.shape());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::int64_t i = 0; i < mask->numel(); ++i) (*mask)[i] = u(rng) >= rate ? keep_scale : T{0};
  auto out = constant(Tensor<T>::uninitialized(x->value.shape()));
  for (std::int64_t i = 0; i < mask->numel(); ++i) out->value[i] = x->value[i] * (*mask)[i];
  if (detail::records(tape, {&x})) {
    Node<T>* o = out.get();
    tape->record(out, [x, o, mask] {
      auto& gx = x->grad_slot();
      for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += o->grad[i] * (*mask)[i];
    });
  }
  return out;
}

template <class T>
Var<T> sum(Tape<T>* tape, const Var<T>& x) {
  T acc{0};
  for (auto v : x->value.values()) acc += v;
  auto out = constant(Tensor<T>(Shape{1}, {acc}));
  if (detail::records(tape, {&x})) {
    Node<T>* o = out.get();
    tape->record(out, [x, o] {
      auto& gx = x->grad_slot();
      const T g = o->grad[0];
      for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
  }
  return out;
}

/// sum(x * weights) for a constant weight tensor of the same shape.
template <class T>
Var<T> weighted_sum(Tape<T>* tape, const Var<T>& x, const Tensor<T>& weights) {
  require(weights.shape() == x->value.shape(), "weighted_sum", "weight shape must equal input shape");
  T acc{0};
  for (std::int64_t i = 0; i < weights.numel(); ++i) acc += x->value[i] * weights[i];
  auto out = constant(Tensor<T>(Shape{1}, {acc}));
  if (detail::records(tape, {&x})) {
    Node<T>* o = out.get();
    tape->record(out, [x, o, weights] {
      auto& gx = x->grad_slot();
      const T g = o->grad[0];
      for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g * weights[i];
    });
  }
  return out;
}

}  // namespace dvnet
