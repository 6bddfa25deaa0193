#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dvnet/tensor/autodiff.hpp"
#include "grad_check.hpp"

using namespace dvnet;
using dvnet::testing::grad_check;
using dvnet::testing::random_tensor;

namespace {

constexpr double kGradTol = 1e-3;

Var<double> vec(std::initializer_list<double> v, Shape shape) { return parameter(Tensor<double>(std::move(shape), v)); }

std::vector<double> values(const Var<double>& v) { return {v->value.values().begin(), v->value.values().end()}; }

double inner(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(ConvNd, HandEvaluatedWindows) {
  auto x = vec({1, 2, 3}, {1, 1, 3});
  auto w = vec({1, 0, -1}, {1, 1, 3});
  auto y = conv_nd<double>(nullptr, x, w, nullptr, {1, 1});
  EXPECT_EQ(values(y), (std::vector<double>{-2, -2, 2}));
}

TEST(ConvNd, IdentityKernel) {
  std::mt19937_64 rng(1);
  auto x = constant(random_tensor({2, 1, 5, 6, 7}, rng));
  Tensor<double> k({1, 1, 3, 3, 3});
  k[13] = 1;
  auto y = conv_nd<double>(nullptr, x, constant(k), nullptr, {1, 1});
  EXPECT_EQ(y->value, x->value);
  auto x1 = constant(random_tensor({1, 1, 9}, rng));
  auto y1 = conv_nd<double>(nullptr, x1, vec({0, 1, 0}, {1, 1, 3}), nullptr, {1, 1});
  EXPECT_EQ(y1->value, x1->value);
}

TEST(ConvNd, OutputExtentFormula) {
  auto x = constant(Tensor<double>({1, 2, 9, 8, 7}));
  auto w = constant(Tensor<double>({3, 2, 3, 2, 1}));
  auto y = conv_nd<double>(nullptr, x, w, nullptr, {2, 1});
  // floor((n + 2p - k)/s) + 1
  EXPECT_EQ(y->value.shape(), (Shape{1, 3, 5, 5, 5}));
}

TEST(ConvNd, RejectsMismatchNamingAxis) {
  auto x = constant(Tensor<double>({1, 1, 4, 2}));
  auto w = constant(Tensor<double>({1, 1, 3, 3}));
  try {
    conv_nd<double>(nullptr, x, w, nullptr, {1, 0});
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("axis 1"), std::string::npos) << e.what();
  }
  auto wc = constant(Tensor<double>({1, 2, 3, 3}));
  EXPECT_THROW(conv_nd<double>(nullptr, x, wc, nullptr, {1, 1}), Error);
}

TEST(ConvNd, FiniteDifferenceKernelGradient4Cube) {
  std::mt19937_64 rng(2);
  auto x = parameter(random_tensor({1, 1, 4, 4, 4}, rng));
  auto w = parameter(random_tensor({1, 1, 3, 3, 3}, rng));
  auto r = grad_check([&](Tape<double>* t) { return sum(t, conv_nd(t, x, w, Var<double>{}, {1, 1})); }, {w, x}, 1e-4,
                      64);
  EXPECT_LT(r.worst, kGradTol);
}

TEST(ConvNd, FiniteDifferenceStridedWithBias) {
  std::mt19937_64 rng(3);
  auto x = parameter(random_tensor({2, 3, 5, 6, 4}, rng));
  auto w = parameter(random_tensor({4, 3, 3, 3, 3}, rng));
  auto b = parameter(random_tensor({4}, rng));
  auto g = random_tensor({2, 4, 3, 3, 2}, rng);
  auto r = grad_check([&](Tape<double>* t) { return weighted_sum(t, conv_nd(t, x, w, b, {2, 1}), g); }, {x, w, b});
  EXPECT_LT(r.worst, kGradTol);
}

TEST(ConvNd, FiniteDifference2dPointwise) {
  std::mt19937_64 rng(4);
  auto x = parameter(random_tensor({2, 5, 4, 3}, rng));
  auto w = parameter(random_tensor({3, 5, 1, 1}, rng));
  auto g = random_tensor({2, 3, 4, 3}, rng);
  auto r = grad_check([&](Tape<double>* t) { return weighted_sum(t, conv_nd(t, x, w, Var<double>{}, {1, 0}), g); },
                      {x, w});
  EXPECT_LT(r.worst, kGradTol);
}

TEST(ConvTranspose, SinglePlacement) {
  auto y = conv_transpose_nd<double>(nullptr, vec({5}, {1, 1, 1}), vec({1, 2, 3}, {1, 1, 3}), nullptr, {2, 0});
  EXPECT_EQ(values(y), (std::vector<double>{5, 10, 15}));
}

TEST(ConvTranspose, IdentityKernel) {
  std::mt19937_64 rng(5);
  auto x = constant(random_tensor({1, 1, 4, 5}, rng));
  auto y = conv_transpose_nd<double>(nullptr, x, vec({1}, {1, 1, 1, 1}), nullptr, {1, 0});
  EXPECT_EQ(y->value, x->value);
}

TEST(ConvTranspose, DoublesExtentForUpsampling) {
  auto x = constant(Tensor<double>({1, 2, 8, 8, 8}));
  auto w = constant(Tensor<double>({2, 3, 3, 3, 3}));
  auto y = conv_transpose_nd<double>(nullptr, x, w, nullptr, {2, 1, 1});
  EXPECT_EQ(y->value.shape(), (Shape{1, 3, 16, 16, 16}));
}

TEST(ConvTranspose, IsAdjointOfConv) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const int stride = 1 + trial % 2;
    const int pad = trial % 2;
    auto x = random_tensor({2, 3, 8, 6, 7}, rng);
    auto k = random_tensor({4, 3, 3, 3, 3}, rng);
    auto cx = conv_nd<double>(nullptr, constant(x), constant(k), nullptr, {stride, pad})->value;
    auto y = random_tensor(cx.shape(), rng);
    // output_padding recovers the extents lost to the floor in the forward map
    Tensor<double> back;
    for (int op = 0; op < stride; ++op) {
      auto t = conv_transpose_nd<double>(nullptr, constant(y), constant(k), nullptr, {stride, pad, op})->value;
      if (t.shape() == x.shape()) back = t;
    }
    if (back.shape() != x.shape()) {
      // extents like 7 with stride 2 need an output_padding per axis; skip the pairing check there
      continue;
    }
    EXPECT_NEAR(inner(cx, y), inner(x, back), 1e-6 * std::max(1.0, std::abs(inner(cx, y))));
  }
  auto x = random_tensor({1, 2, 8, 8, 8}, rng);
  auto k = random_tensor({3, 2, 3, 3, 3}, rng);
  auto cx = conv_nd<double>(nullptr, constant(x), constant(k), nullptr, {2, 1})->value;
  auto y = random_tensor(cx.shape(), rng);
  auto back = conv_transpose_nd<double>(nullptr, constant(y), constant(k), nullptr, {2, 1, 1})->value;
  ASSERT_EQ(back.shape(), x.shape());
  EXPECT_NEAR(inner(cx, y), inner(x, back), 1e-6 * std::abs(inner(cx, y)));
}

TEST(ConvTranspose, FiniteDifference) {
  std::mt19937_64 rng(7);
  auto x = parameter(random_tensor({2, 3, 3, 4, 2}, rng));
  auto w = parameter(random_tensor({3, 2, 3, 3, 3}, rng));
  auto b = parameter(random_tensor({2}, rng));
  auto g = random_tensor({2, 2, 6, 8, 4}, rng);
  auto r = grad_check([&](Tape<double>* t) { return weighted_sum(t, conv_transpose_nd(t, x, w, b, {2, 1, 1}), g); },
                      {x, w, b});
  EXPECT_LT(r.worst, kGradTol);
}

TEST(BatchNorm, ConstantInputGivesZeros) {
  BatchNormState<double> st(1);
  auto x = constant(Tensor<double>({2, 1, 3, 3}, 4.5));
  auto y = batch_norm<double>(nullptr, x, vec({1}, {1}), vec({0}, {1}), st, Mode::train);
  for (auto v : y->value.values()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, NormalizesAndApplesAffine) {
  BatchNormState<double> st(1);
  auto x = constant(Tensor<double>({2, 1, 1}, {1, 3}));
  auto y = batch_norm<double>(nullptr, x, vec({1}, {1}), vec({0}, {1}), st, Mode::train);
  EXPECT_NEAR(y->value[0], -1, 1e-3);
  EXPECT_NEAR(y->value[1], 1, 1e-3);
  auto z = batch_norm<double>(nullptr, x, vec({2}, {1}), vec({5}, {1}), st, Mode::train);
  EXPECT_NEAR(z->value[0], 3, 1e-3);
  EXPECT_NEAR(z->value[1], 7, 1e-3);
}

TEST(BatchNorm, EvalBeforeTrainRejected) {
  BatchNormState<double> st(1);
  auto x = constant(Tensor<double>({2, 1, 1}, {1, 3}));
  EXPECT_THROW(batch_norm<double>(nullptr, x, vec({1}, {1}), vec({0}, {1}), st, Mode::eval), Error);
}

TEST(BatchNorm, RunningStatisticsMovingAverage) {
  BatchNormState<double> st(1);
  auto x = constant(Tensor<double>({2, 1, 1}, {1, 3}));
  batch_norm<double>(nullptr, x, vec({1}, {1}), vec({0}, {1}), st, Mode::train);
  // 0.9 * 0 + 0.1 * 2; variance is unbiased: 0.9 * 1 + 0.1 * 2
  EXPECT_NEAR(st.running_mean[0], 0.2, 1e-12);
  EXPECT_NEAR(st.running_var[0], 1.1, 1e-12);
  EXPECT_EQ(st.batches_seen, 1);
  auto y = batch_norm<double>(nullptr, x, vec({1}, {1}), vec({0}, {1}), st, Mode::eval);
  EXPECT_NEAR(y->value[0], (1 - 0.2) / std::sqrt(1.1 + 1e-5), 1e-12);
}

TEST(BatchNorm, FiniteDifferenceTrainAndEval) {
  std::mt19937_64 rng(8);
  auto x = parameter(random_tensor({2, 3, 3, 2, 2}, rng));
  auto s = parameter(random_tensor({3}, rng, 0.5, 1.5));
  auto b = parameter(random_tensor({3}, rng));
  auto g = random_tensor({2, 3, 3, 2, 2}, rng);
  BatchNormState<double> st(3);
  auto r = grad_check([&](Tape<double>* t) { return weighted_sum(t, batch_norm(t, x, s, b, st, Mode::train), g); },
                      {x, s, b}, 1e-4, 40);
  EXPECT_LT(r.worst, kGradTol);
  const BatchNormState<double>& frozen = st;
  auto e = grad_check([&](Tape<double>* t) { return weighted_sum(t, batch_norm(t, x, s, b, frozen, Mode::eval), g); },
                      {x, s, b});
  EXPECT_LT(e.worst, kGradTol);
}

TEST(AvgPool, Means) {
  auto y = avg_pool_nd<double>(nullptr, vec({1, 3, 5, 7}, {1, 1, 4}), 2, 2);
  EXPECT_EQ(values(y), (std::vector<double>{2, 6}));
  auto c = avg_pool_nd<double>(nullptr, constant(Tensor<double>({1, 2, 4, 4, 4}, 2.5)), 2, 2);
  EXPECT_EQ(c->value.shape(), (Shape{1, 2, 2, 2, 2}));
  for (auto v : c->value.values()) EXPECT_EQ(v, 2.5);
}

TEST(AvgPool, GradientOfSumIsUniform) {
  auto x = parameter(Tensor<double>({1, 1, 4, 4, 4}, 1.0));
  Tape<double> tape;
  tape.backward(sum(&tape, avg_pool_nd(&tape, x, 2, 2)));
  for (auto v : x->grad.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 8);
  std::mt19937_64 rng(9);
  auto z = parameter(random_tensor({2, 2, 4, 6}, rng));
  auto g = random_tensor({2, 2, 2, 3}, rng);
  auto r = grad_check([&](Tape<double>* t) { return weighted_sum(t, avg_pool_nd(t, z, 2, 2), g); }, {z});
  EXPECT_LT(r.worst, kGradTol);
}

TEST(AvgPool, RejectsIndivisibleExtent) {
  EXPECT_THROW(avg_pool_nd<double>(nullptr, constant(Tensor<double>({1, 1, 5})), 2, 2), Error);
  EXPECT_THROW(avg_pool_nd<double>(nullptr, constant(Tensor<double>({1, 1, 2})), 4, 2), Error);
}

TEST(Concat, DepthsAddAndSliceRecovers) {
  std::mt19937_64 rng(10);
  auto a = constant(random_tensor({2, 64, 2, 2, 2}, rng));
  auto b = constant(random_tensor({2, 64, 2, 2, 2}, rng));
  auto c = concat_channels<double>(nullptr, a, b);
  EXPECT_EQ(c->value.channels(), 128);
  EXPECT_EQ(slice_channels<double>(nullptr, c, 0, 64)->value, a->value);
  EXPECT_EQ(slice_channels<double>(nullptr, c, 64, 64)->value, b->value);
  auto e = concat_channels<double>(nullptr, a, constant(Tensor<double>({2, 0, 2, 2, 2})));
  EXPECT_EQ(e->value, a->value);
}

TEST(Concat, SpatialMismatchRejected) {
  auto a = constant(Tensor<double>({1, 1, 2, 2}));
  auto b = constant(Tensor<double>({1, 1, 2, 3}));
  EXPECT_THROW(concat_channels<double>(nullptr, a, b), Error);
}

TEST(Concat, FiniteDifference) {
  std::mt19937_64 rng(11);
  auto a = parameter(random_tensor({2, 2, 3}, rng));
  auto b = parameter(random_tensor({2, 3, 3}, rng));
  auto g = random_tensor({2, 5, 3}, rng);
  auto r = grad_check([&](Tape<double>* t) { return weighted_sum(t, concat_channels(t, a, b), g); }, {a, b});
  EXPECT_LT(r.worst, kGradTol);
  auto g2 = random_tensor({2, 2, 3}, rng);
  auto s = grad_check([&](Tape<double>* t) { return weighted_sum(t, slice_channels(t, b, 1, 2), g2); }, {b});
  EXPECT_LT(s.worst, kGradTol);
}

TEST(Softmax, ClosedForms) {
  auto eq = softmax_channels<double>(nullptr, vec({0.7, 0.7, 0.7}, {1, 3, 1}));
  for (auto v : eq->value.values()) EXPECT_NEAR(v, 1.0 / 3, 1e-15);
  auto p = softmax_channels<double>(nullptr, vec({0, std::log(3.0)}, {1, 2, 1}));
  EXPECT_NEAR(p->value[0], 0.25, 1e-15);
  EXPECT_NEAR(p->value[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  std::mt19937_64 rng(12);
  auto x = random_tensor({2, 4, 3, 3}, rng, -50, 50);
  auto shifted = x;
  for (auto& v : shifted.values()) v += 123.0;
  auto a = softmax_channels<double>(nullptr, constant(x))->value;
  auto b = softmax_channels<double>(nullptr, constant(shifted))->value;
  for (std::int64_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t v = 0; v < 9; ++v) {
      double s = 0;
      for (std::int64_t c = 0; c < 4; ++c) {
        EXPECT_GE(a[(n * 4 + c) * 9 + v], 0.0);
        s += a[(n * 4 + c) * 9 + v];
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Softmax, FiniteDifference) {
  std::mt19937_64 rng(13);
  auto x = parameter(random_tensor({2, 3, 4}, rng, -2, 2));
  auto g = random_tensor({2, 3, 4}, rng);
  auto r = grad_check([&](Tape<double>* t) { return weighted_sum(t, softmax_channels(t, x), g); }, {x});
  EXPECT_LT(r.worst, kGradTol);
}

TEST(Relu, GateAndFiniteDifference) {
  auto x = vec({-1, 2, -3, 4}, {1, 1, 4});
  Tape<double> tape;
  tape.backward(sum(&tape, relu(&tape, x)));
  EXPECT_EQ(values(constant(x->grad)), (std::vector<double>{0, 1, 0, 1}));
  std::mt19937_64 rng(14);
  auto z = parameter(random_tensor({2, 2, 5}, rng));
  auto g = random_tensor({2, 2, 5}, rng);
  auto r = grad_check([&](Tape<double>* t) { return weighted_sum(t, relu(t, z), g); }, {z});
  EXPECT_LT(r.worst, kGradTol);
}

TEST(Dropout, InvertedScalingAndFixedMaskGradient) {
  std::mt19937_64 rng(15);
  auto x = parameter(random_tensor({2, 3, 4, 4}, rng));
  auto g = random_tensor({2, 3, 4, 4}, rng);
  auto r = grad_check(
      [&](Tape<double>* t) {
        std::mt19937_64 mask_rng(99);
        return weighted_sum(t, dropout(t, x, 0.3, mask_rng), g);
      },
      {x});
  EXPECT_LT(r.worst, kGradTol);
  std::mt19937_64 mask_rng(1);
  auto y = dropout<double>(nullptr, x, 0.5, mask_rng);
  for (std::int64_t i = 0; i < x->value.numel(); ++i)
    EXPECT_TRUE(y->value[i] == 0.0 || std::abs(y->value[i] - 2 * x->value[i]) < 1e-15);
  EXPECT_EQ(dropout<double>(nullptr, x, 0.0, mask_rng), x);
}

TEST(Backward, SumGivesOnesAndAccumulates) {
  auto x = parameter(Tensor<double>({1, 2, 3}));
  Tape<double> tape;
  auto loss = sum(&tape, x);
  tape.backward(loss);
  for (auto v : x->grad.values()) EXPECT_EQ(v, 1.0);
  tape.backward(loss);
  for (auto v : x->grad.values()) EXPECT_EQ(v, 2.0);
}

TEST(Backward, NonScalarLossRejected) {
  auto x = parameter(Tensor<double>({1, 2, 3}));
  Tape<double> tape;
  auto y = relu(&tape, x);
  EXPECT_THROW(tape.backward(y), Error);
}

TEST(Backward, BitReproducibleInDeterministicMode) {
  std::mt19937_64 rng(16);
  auto xv = random_tensor({2, 8, 6, 6, 6}, rng);
  auto wv = random_tensor({8, 8, 3, 3, 3}, rng);
  auto run = [&] {
    auto x = parameter(xv);
    auto w = parameter(wv);
    Tape<double> tape;
    auto loss = sum(&tape, relu(&tape, conv_nd(&tape, x, w, Var<double>{}, {1, 1})));
    tape.backward(loss);
    return std::make_pair(x->grad, w->grad);
  };
  auto a = run();
  auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}
