#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dvnet/tensor/autodiff.hpp"

namespace dvnet {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Rate is multiplied by `decay` every `decay_interval` steps.
  double decay = 0.97;
  std::int64_t decay_interval = 500;
};

template <class T>
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Var<T>>> params, AdamOptions options = {})
      : params_(std::move(params)), options_(options) {
    for (const auto& [name, v] : params_) {
      m_.emplace_back(v->value.shape());
      v_.emplace_back(v->value.shape());
    }
  }

  std::int64_t step_count() const { return step_; }

  /// Learning rate applied by the next step.
  double learning_rate() const { return scheduled_rate(step_); }

  double scheduled_rate(std::int64_t step) const {
    return options_.learning_rate * std::pow(options_.decay, static_cast<double>(step / options_.decay_interval));
  }

  /// Applies one update from the parameters' gradient slots. A non-finite
  /// gradient rejects the whole step and leaves parameters and moments intact.
  void step() {
    for (const auto& [name, v] : params_)
      for (auto g : v->grad.values())
        if (!std::isfinite(static_cast<double>(g)))
          throw Error("adam", "non-finite gradient in " + name + " at step " + std::to_string(step_));
    FlushDenormals flush;
    const double lr = learning_rate();
    const double t = static_cast<double>(step_ + 1);
    const double c1 = 1.0 - std::pow(options_.beta1, t);
    const double c2 = 1.0 - std::pow(options_.beta2, t);
    for (std::size_t p = 0; p < params_.size(); ++p) {
      auto& node = *params_[p].second;
      if (node.grad.shape() != node.value.shape()) continue;  // never received a gradient
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::int64_t i = 0; i < node.value.numel(); ++i) {
        const double g = node.grad[i];
        const double mi = options_.beta1 * m[i] + (1 - options_.beta1) * g;
        const double vi = options_.beta2 * v[i] + (1 - options_.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        node.value[i] -= static_cast<T>(lr * (mi / c1) / (std::sqrt(vi / c2) + options_.epsilon));
      }
    }
    ++step_;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
  AdamOptions options_;
  std::vector<Tensor<T>> m_, v_;
  std::int64_t step_ = 0;
};

}  // namespace dvnet
