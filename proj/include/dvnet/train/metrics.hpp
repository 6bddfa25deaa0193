#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dvnet/core/error.hpp"
#include "dvnet/tensor/tensor.hpp"

namespace dvnet {

/// Intersection over union of the indicator masks of class `cls`; 1 when both are empty.
inline double iou_per_class(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, int cls,
                            int num_classes) {
  require(pred.size() == truth.size(), "iou", "label volumes differ in size");
  require(cls >= 0 && cls < num_classes, "iou",
          "class id " + std::to_string(cls) + " outside [0, " + std::to_string(num_classes) + ")");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == cls, g = truth[i] == cls;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct SegmentationMetrics {
  double accuracy = 0;
  std::vector<double> iou;
  double mean_iou = 0;
};

inline SegmentationMetrics label_metrics(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                                         int num_classes) {
  require(pred.size() == truth.size(), "evaluate", "label volumes differ in size");
  SegmentationMetrics m;
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
  m.accuracy = pred.empty() ? 1.0 : static_cast<double>(correct) / static_cast<double>(pred.size());
  for (int c = 0; c < num_classes; ++c) {
    m.iou.push_back(iou_per_class(pred, truth, c, num_classes));
    m.mean_iou += m.iou.back();
  }
  m.mean_iou /= num_classes;
  return m;
}

/// Per-voxel argmax over the channel axis of [batch, classes, spatial...],
/// flattened batch-major.
template <class T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& probs) {
  const auto n = probs.batch(), c = probs.channels(), v = probs.spatial_size();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n * v));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < v; ++i) {
      const T* p = probs.data() + b * c * v + i;
      std::int64_t best = 0;
      for (std::int64_t k = 1; k < c; ++k)
        if (p[k * v] > p[best * v]) best = k;
      out[static_cast<std::size_t>(b * v + i)] = static_cast<std::uint8_t>(best);
    }
  return out;
}

/// Labels encoded by a one-hot tensor [batch, classes, spatial...].
template <class T>
std::vector<std::uint8_t> one_hot_labels(const Tensor<T>& one_hot) {
  return argmax_labels(one_hot);
}

template <class T>
Tensor<T> one_hot(std::span<const std::uint8_t> labels, const Shape& spatial, std::int64_t batch, int num_classes) {
  Shape shape{batch, num_classes};
  shape.insert(shape.end(), spatial.begin(), spatial.end());
  Tensor<T> t(shape);
  const auto v = shape_numel(spatial);
  require(static_cast<std::int64_t>(labels.size()) == batch * v, "one_hot", "label count does not match shape");
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t i = 0; i < v; ++i) {
      const int c = labels[static_cast<std::size_t>(b * v + i)];
      if (c >= num_classes) throw Error("one_hot", "label " + std::to_string(c) + " outside class range");
      t[(b * num_classes + c) * v + i] = T{1};
    }
  return t;
}

/// Argmax labels of a softmax output scored against integer truth labels.
template <class T>
SegmentationMetrics evaluate(const Tensor<T>& probs, std::span<const std::uint8_t> truth) {
  const auto pred = argmax_labels(probs);
  return label_metrics(pred, truth, static_cast<int>(probs.channels()));
}

}  // namespace dvnet
