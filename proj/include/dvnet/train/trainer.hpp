#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "dvnet/core/parallel.hpp"
#include "dvnet/net/network.hpp"
#include "dvnet/train/adam.hpp"
#include "dvnet/train/augment.hpp"
#include "dvnet/train/losses.hpp"
#include "dvnet/train/metrics.hpp"

namespace dvnet {

struct HistoryRow {
  std::int64_t iteration = 0;
  double learning_rate = 0;
  double loss = 0;
  double accuracy = 0;
  double mean_iou = 0;
};

struct TrainOptions {
  std::int64_t iterations = 1000;
  int batch_size = 2;
  LossKind loss = LossKind::dice;
  /// Spatial extents of training crops.
  Shape crop{64, 64, 32};
  /// Random rotations and flips on top of the random crop.
  bool augment = true;
  std::uint64_t seed = 1;
  AdamOptions adam;
  /// Used by cross-entropy only; empty means unit weights.
  std::vector<double> class_weights;
  std::int64_t validate_every = 100;
  /// Written whenever validation mean IoU improves (empty: not written).
  std::string checkpoint_path;
  /// CSV of iteration, lr, loss, accuracy, mean IoU (empty: not written).
  std::string history_path;
  /// Batches assembled ahead of the optimizer.
  std::size_t prefetch = 2;
  std::function<void(const HistoryRow&)> on_iteration;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  /// (iteration, mean IoU) of each validation pass.
  std::vector<std::pair<std::int64_t, double>> validation;
  double best_validation_iou = -1;
  std::int64_t best_iteration = -1;
};

/// Inverse class frequency over the dataset, normalized to mean 1. Absent
/// classes get weight 0 before normalization.
inline std::vector<double> inverse_frequency_weights(const std::vector<Sample>& data, int num_classes) {
  std::vector<double> count(static_cast<std::size_t>(num_classes), 0.0);
  for (const auto& s : data)
    for (auto l : s.labels.values()) {
      if (l >= num_classes) throw Error("train", "label " + std::to_string(l) + " outside class range");
      count[l] += 1;
    }
  std::vector<double> w(count.size(), 0.0);
  double total = 0;
  for (std::size_t c = 0; c < w.size(); ++c) {
    w[c] = count[c] > 0 ? 1.0 / count[c] : 0.0;
    total += w[c];
  }
  require(total > 0, "train", "dataset has no labelled voxels");
  for (auto& v : w) v *= static_cast<double>(w.size()) / total;
  return w;
}

/// Stacks samples into a network batch: image [N, C, spatial...] and labels.
inline std::pair<Tensor<float>, std::vector<std::uint8_t>> stack_batch(const std::vector<Sample>& batch) {
  require(!batch.empty(), "train", "empty batch");
  Shape shape = batch[0].image.shape();
  shape.insert(shape.begin(), static_cast<std::int64_t>(batch.size()));
  Tensor<float> image(shape);
  std::vector<std::uint8_t> labels;
  const auto per = batch[0].image.numel();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    require(batch[b].image.shape() == batch[0].image.shape(), "train", "batch samples differ in shape");
    std::copy(batch[b].image.values().begin(), batch[b].image.values().end(),
              image.data() + static_cast<std::int64_t>(b) * per);
    labels.insert(labels.end(), batch[b].labels.values().begin(), batch[b].labels.values().end());
  }
  return {std::move(image), std::move(labels)};
}

/// Eval-mode metrics over whole samples (extents must suit the network).
inline SegmentationMetrics validate(const Network<float>& net, const std::vector<Sample>& data) {
  std::vector<std::uint8_t> pred, truth;
  for (const auto& s : data) {
    auto [image, labels] = stack_batch({s});
    auto p = argmax_labels(predict(net, image));
    pred.insert(pred.end(), p.begin(), p.end());
    truth.insert(truth.end(), labels.begin(), labels.end());
  }
  return label_metrics(pred, truth, net.config.num_classes);
}

inline void write_history(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "train", "cannot write " + path);
  out << "iteration,lr,loss,accuracy,mean_iou\n";
  out.precision(9);
  for (const auto& r : rows)
    out << r.iteration << ',' << r.learning_rate << ',' << r.loss << ',' << r.accuracy << ',' << r.mean_iou << '\n';
}

/// Mini-batch training with Adam. Metrics in the history are computed on the
/// train-mode outputs of each batch. When `validation` is nonempty the
/// network is left holding the parameters of the best validation pass.
inline TrainResult train(Network<float>& net, const std::vector<Sample>& data, const std::vector<Sample>& validation,
                         const TrainOptions& options) {
  require(!data.empty(), "train", "empty training set");
  require(options.batch_size >= 1, "train", "batch size must be >= 1");
  const int classes = net.config.num_classes;
  Adam<float> adam(net.named_parameters(), options.adam);
  TrainResult result;
  std::optional<Network<float>> best;

  BoundedQueue<std::vector<Sample>> queue(options.prefetch);
  std::exception_ptr producer_error;
  std::thread producer([&] {
    try {
      std::mt19937_64 rng(options.seed);
      std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
      for (std::int64_t it = 0; it < options.iterations; ++it) {
        std::vector<Sample> batch;
        for (int b = 0; b < options.batch_size; ++b) batch.push_back(augment(data[pick(rng)], options.crop, rng, options.augment));
        queue.push(std::move(batch));
      }
    } catch (...) {
      producer_error = std::current_exception();
    }
    queue.close();
  });
  struct Joiner {
    std::thread& t;
    BoundedQueue<std::vector<Sample>>& q;
    ~Joiner() {
      q.close();
      if (t.joinable()) t.join();
    }
  } joiner{producer, queue};

  std::mt19937_64 dropout_rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::int64_t it = 0; it < options.iterations; ++it) {
    auto batch = queue.pop();
    if (!batch) break;
    auto [image, labels] = stack_batch(*batch);
    const Shape spatial(image.shape().begin() + 2, image.shape().end());
    const auto truth = one_hot<float>(labels, spatial, image.batch(), classes);

    Tape<float> tape;
    ForwardOptions<float> fo;
    fo.mode = Mode::train;
    fo.tape = &tape;
    fo.dropout_rng = &dropout_rng;
    auto probs = forward(net, constant(std::move(image)), fo);
    auto loss = segmentation_loss(&tape, options.loss, probs, truth, options.class_weights);
    const double loss_value = loss->value[0];
    require(std::isfinite(loss_value), "train", "loss diverged (non-finite) at iteration " + std::to_string(it));
    net.zero_grad();
    tape.backward(loss);
    const auto metrics = label_metrics(argmax_labels(probs->value), labels, classes);
    HistoryRow row{it, adam.learning_rate(), loss_value, metrics.accuracy, metrics.mean_iou};
    tape.clear();
    probs.reset();
    try {
      adam.step();
    } catch (const Error& e) {
      throw Error("train", "diverged at iteration " + std::to_string(it) + ": " + e.what());
    }
    result.history.push_back(row);
    if (options.on_iteration) options.on_iteration(row);

    const bool last = it + 1 == options.iterations;
    if (!validation.empty() && options.validate_every > 0 && ((it + 1) % options.validate_every == 0 || last)) {
      const double iou = validate(net, validation).mean_iou;
      result.validation.emplace_back(it + 1, iou);
      if (iou > result.best_validation_iou) {
        result.best_validation_iou = iou;
        result.best_iteration = it + 1;
        best = clone_network(net);
        if (!options.checkpoint_path.empty()) save_network(net, options.checkpoint_path);
      }
    }
  }
  queue.close();
  producer.join();
  if (producer_error) std::rethrow_exception(producer_error);
  if (best) net = std::move(*best);
  else if (!options.checkpoint_path.empty()) save_network(net, options.checkpoint_path);
  if (!options.history_path.empty()) write_history(options.history_path, result.history);
  return result;
}

}  // namespace dvnet
