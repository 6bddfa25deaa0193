#pragma once

// Segmentation losses on softmax outputs [batch, classes, spatial...] against
// one-hot truth of the same shape.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dvnet/tensor/autodiff.hpp"

namespace dvnet {

enum class LossKind { dice, cross_entropy };

namespace detail {

template <class T>
void check_loss_inputs(const Tensor<T>& pred, const Tensor<T>& truth, const char* stage) {
  require(pred.numel() > 0, stage, "empty prediction");
  require(pred.shape() == truth.shape(), stage,
          "prediction shape " + shape_str(pred.shape()) + " differs from truth shape " + shape_str(truth.shape()));
  require(pred.rank() >= 2, stage, "expected [batch, classes, spatial...]");
}

}  // namespace detail

/// Soft dice: 1 - (2 sum(p*g) + s) / (sum(p) + sum(g) + s) per class, averaged over classes.
template <class T>
Var<T> dice_loss(Tape<T>* tape, const Var<T>& pred, const Tensor<T>& truth, double smoothing = 1.0) {
  const auto& p = pred->value;
  detail::check_loss_inputs(p, truth, "dice_loss");
  const auto n = p.batch(), c = p.channels(), v = p.spatial_size();
  std::vector<double> inter(static_cast<std::size_t>(c)), total(static_cast<std::size_t>(c));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t k = 0; k < c; ++k) {
      const T* pp = p.data() + (b * c + k) * v;
      const T* gg = truth.data() + (b * c + k) * v;
      double i = 0, s = 0;
      for (std::int64_t x = 0; x < v; ++x) {
        i += double(pp[x]) * gg[x];
        s += double(pp[x]) + gg[x];
      }
      inter[static_cast<std::size_t>(k)] += i;
      total[static_cast<std::size_t>(k)] += s;
    }
  double loss = 0;
  for (std::int64_t k = 0; k < c; ++k)
    loss += 1.0 - (2 * inter[static_cast<std::size_t>(k)] + smoothing) / (total[static_cast<std::size_t>(k)] + smoothing);
  loss /= static_cast<double>(c);
  auto out = constant(Tensor<T>(Shape{1}, {static_cast<T>(loss)}));
  if (detail::records(tape, {&pred})) {
    Node<T>* o = out.get();
    tape->record(out, [pred, o, truth, inter, total, smoothing, n, c, v] {
      auto& gp = pred->grad_slot();
      const double g = o->grad[0] / static_cast<double>(c);
      for (std::int64_t k = 0; k < c; ++k) {
        const double den = total[static_cast<std::size_t>(k)] + smoothing;
        const double num = 2 * inter[static_cast<std::size_t>(k)] + smoothing;
        // d/dp of -(num/den) = -(2 g den - num) / den^2
        const double a = -2.0 / den * g, b = num / (den * den) * g;
        for (std::int64_t bb = 0; bb < n; ++bb) {
          T* d = gp.data() + (bb * c + k) * v;
          const T* gg = truth.data() + (bb * c + k) * v;
          for (std::int64_t x = 0; x < v; ++x) d[x] += static_cast<T>(a * gg[x] + b);
        }
      }
    });
  }
  return out;
}

/// Mean over voxels of -sum_c w_c g_c log(clamp(p_c, 1e-7, 1)).
template <class T>
Var<T> cross_entropy_loss(Tape<T>* tape, const Var<T>& pred, const Tensor<T>& truth,
                          const std::vector<double>& class_weights = {}) {
  const auto& p = pred->value;
  detail::check_loss_inputs(p, truth, "cross_entropy_loss");
  const auto n = p.batch(), c = p.channels(), v = p.spatial_size();
  require(class_weights.empty() || static_cast<std::int64_t>(class_weights.size()) == c, "cross_entropy_loss",
          "got " + std::to_string(class_weights.size()) + " class weights for " + std::to_string(c) + " classes");
  std::vector<double> w(static_cast<std::size_t>(c), 1.0);
  if (!class_weights.empty()) w = class_weights;
  constexpr double lo = 1e-7;
  double loss = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t k = 0; k < c; ++k) {
      const T* pp = p.data() + (b * c + k) * v;
      const T* gg = truth.data() + (b * c + k) * v;
      double acc = 0;
      for (std::int64_t x = 0; x < v; ++x)
        if (gg[x] != 0) acc += gg[x] * std::log(std::clamp<double>(pp[x], lo, 1.0));
      loss -= w[static_cast<std::size_t>(k)] * acc;
    }
  const double voxels = static_cast<double>(n * v);
  auto out = constant(Tensor<T>(Shape{1}, {static_cast<T>(loss / voxels)}));
  if (detail::records(tape, {&pred})) {
    Node<T>* o = out.get();
    tape->record(out, [pred, o, truth, w, voxels, n, c, v] {
      auto& gp = pred->grad_slot();
      const double g = o->grad[0] / voxels;
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t k = 0; k < c; ++k) {
          const T* pp = pred->value.data() + (b * c + k) * v;
          const T* gg = truth.data() + (b * c + k) * v;
          T* d = gp.data() + (b * c + k) * v;
          for (std::int64_t x = 0; x < v; ++x)
            if (gg[x] != 0 && pp[x] >= lo && pp[x] <= 1) d[x] -= static_cast<T>(g * w[static_cast<std::size_t>(k)] * gg[x] / pp[x]);
        }
    });
  }
  return out;
}

template <class T>
Var<T> segmentation_loss(Tape<T>* tape, LossKind kind, const Var<T>& pred, const Tensor<T>& truth,
                         const std::vector<double>& class_weights = {}) {
  return kind == LossKind::dice ? dice_loss(tape, pred, truth) : cross_entropy_loss(tape, pred, truth, class_weights);
}

}  // namespace dvnet
