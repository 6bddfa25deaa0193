#pragma once

// Central finite-difference oracle for autodiff tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dvnet/tensor/autodiff.hpp"

namespace dvnet::testing {

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(shape);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheckResult {
  double worst = 0.0;
  int checked = 0;
};

/// `loss(tape)` must rebuild the scalar loss from `inputs` each call. Checks up
/// to `samples` entries of every input (all entries when the input is smaller).
inline GradCheckResult grad_check(const std::function<Var<double>(Tape<double>*)>& loss,
                                  const std::vector<Var<double>>& inputs, double eps = 1e-4, int samples = 16,
                                  std::uint64_t seed = 7) {
  for (const auto& v : inputs) v->zero_grad();
  Tape<double> tape;
  tape.backward(loss(&tape));
  std::mt19937_64 rng(seed);
  GradCheckResult r;
  for (const auto& v : inputs) {
    const auto n = v->value.numel();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(samples)));
    for (auto i : idx) {
      const double saved = v->value[i];
      v->value[i] = saved + eps;
      const double up = loss(nullptr)->value[0];
      v->value[i] = saved - eps;
      const double down = loss(nullptr)->value[0];
      v->value[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      r.worst = std::max(r.worst, relative_error(v->grad[i], numeric));
      ++r.checked;
    }
  }
  return r;
}

}  // namespace dvnet::testing
