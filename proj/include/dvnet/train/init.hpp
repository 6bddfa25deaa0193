#pragma once

#include <cmath>
#include <random>

#include "dvnet/core/error.hpp"
#include "dvnet/tensor/tensor.hpp"

namespace dvnet {

/// Glorot/Xavier uniform initialization on +-sqrt(6 / (fan_in + fan_out)).
/// For convolution kernels the fans are channel count times kernel volume.
template <class T>
Tensor<T> xavier_init(Shape shape, std::int64_t fan_in, std::int64_t fan_out, std::mt19937_64& rng) {
  require(fan_in > 0 && fan_out > 0, "xavier_init", "fans must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace dvnet
