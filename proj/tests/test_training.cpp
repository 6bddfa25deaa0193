#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "dvnet/train/trainer.hpp"
#include "grad_check.hpp"

using namespace dvnet;
using dvnet::testing::grad_check;
using dvnet::testing::random_tensor;

namespace {

Tensor<double> binary_pair(const std::vector<double>& p) {
  // two-class one-hot-like tensor [1, 1, n] is enough for single-class dice
  return Tensor<double>({1, 1, static_cast<std::int64_t>(p.size())}, std::span<const double>(p));
}

Tensor<double> random_softmax(const Shape& shape, std::mt19937_64& rng) {
  return softmax_channels<double>(nullptr, constant(random_tensor(shape, rng, -2, 2)))->value;
}

Tensor<double> random_one_hot(const Shape& shape, std::mt19937_64& rng) {
  Tensor<double> t(shape);
  const auto n = shape[0], c = shape[1], v = t.spatial_size();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < v; ++i) t[(b * c + static_cast<std::int64_t>(rng() % c)) * v + i] = 1;
  return t;
}

}  // namespace

TEST(DiceLoss, IdentitiesOnBinaryMasks) {
  auto g = binary_pair({1, 1, 1, 1, 0, 0, 0, 0});
  EXPECT_NEAR(dice_loss<double>(nullptr, constant(g), g)->value[0], 0.0, 1e-12);
  auto disjoint = binary_pair({0, 0, 0, 0, 1, 1, 1, 1});
  EXPECT_NEAR(dice_loss<double>(nullptr, constant(disjoint), g)->value[0], 1.0, 1.0 / 9 + 1e-12);
  EXPECT_NEAR(dice_loss<double>(nullptr, constant(disjoint), g, 0.0)->value[0], 1.0, 1e-12);
  auto half = binary_pair({1, 1, 0, 0, 1, 1, 0, 0});
  EXPECT_NEAR(dice_loss<double>(nullptr, constant(half), g, 0.0)->value[0], 0.5, 1e-12);
  EXPECT_THROW(dice_loss<double>(nullptr, constant(Tensor<double>({1, 1, 0})), Tensor<double>({1, 1, 0})), Error);
  EXPECT_THROW(dice_loss<double>(nullptr, constant(half), Tensor<double>({1, 1, 4})), Error);
}

TEST(DiceLoss, FiniteDifference) {
  std::mt19937_64 rng(1);
  auto p = parameter(random_softmax({2, 3, 4, 3}, rng));
  auto g = random_one_hot({2, 3, 4, 3}, rng);
  auto r = grad_check([&](Tape<double>* t) { return dice_loss(t, p, g); }, {p});
  EXPECT_LT(r.worst, 1e-3);
}

TEST(CrossEntropy, Identities) {
  std::mt19937_64 rng(2);
  auto g = random_one_hot({2, 3, 5}, rng);
  EXPECT_NEAR(cross_entropy_loss<double>(nullptr, constant(g), g)->value[0], 0.0, 1e-12);
  auto uniform = constant(Tensor<double>({2, 3, 5}, 1.0 / 3));
  EXPECT_NEAR(cross_entropy_loss<double>(nullptr, uniform, g)->value[0], std::log(3.0), 1e-12);
  auto p = constant(random_softmax({2, 3, 5}, rng));
  const double base = cross_entropy_loss<double>(nullptr, p, g, {1, 2, 0.5})->value[0];
  EXPECT_NEAR(cross_entropy_loss<double>(nullptr, p, g, {2, 4, 1})->value[0], 2 * base, 1e-12);
  EXPECT_THROW(cross_entropy_loss<double>(nullptr, p, g, {1, 1}), Error);
}

TEST(CrossEntropy, ClampsZeroProbabilities) {
  Tensor<double> g({1, 2, 1}, {1, 0});
  auto p = constant(Tensor<double>({1, 2, 1}, {0, 1}));
  EXPECT_NEAR(cross_entropy_loss<double>(nullptr, p, g)->value[0], -std::log(1e-7), 1e-9);
}

TEST(CrossEntropy, FiniteDifferenceWeighted) {
  std::mt19937_64 rng(3);
  auto p = parameter(random_softmax({2, 3, 6}, rng));
  auto g = random_one_hot({2, 3, 6}, rng);
  auto r = grad_check([&](Tape<double>* t) { return cross_entropy_loss(t, p, g, {0.5, 1.0, 1.5}); }, {p});
  EXPECT_LT(r.worst, 1e-3);
}

TEST(Losses, NonNegativeOnRandomInputs) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = constant(random_softmax({1, 3, 7}, rng));
    auto g = random_one_hot({1, 3, 7}, rng);
    EXPECT_GE(dice_loss<double>(nullptr, p, g)->value[0], 0.0);
    EXPECT_GE(cross_entropy_loss<double>(nullptr, p, g)->value[0], 0.0);
  }
}

TEST(Iou, Identities) {
  std::vector<std::uint8_t> a{1, 1, 0}, b{1, 0, 1};
  EXPECT_DOUBLE_EQ(iou_per_class(a, a, 1, 2), 1.0);
  EXPECT_DOUBLE_EQ(iou_per_class(a, b, 1, 2), 1.0 / 3);
  std::vector<std::uint8_t> c{1, 1, 0, 0}, d{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(iou_per_class(c, d, 1, 2), 0.0);
  std::vector<std::uint8_t> zeros(4, 0);
  EXPECT_DOUBLE_EQ(iou_per_class(zeros, zeros, 1, 2), 1.0);
  EXPECT_THROW(iou_per_class(a, b, 2, 2), Error);
}

TEST(Iou, SymmetricAndPermutationInvariant) {
  std::mt19937_64 rng(5);
  std::vector<std::uint8_t> a(200), b(200);
  for (auto& v : a) v = rng() % 3;
  for (auto& v : b) v = rng() % 3;
  for (int c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(iou_per_class(a, b, c, 3), iou_per_class(b, a, c, 3));
    std::vector<std::size_t> perm(200);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::uint8_t> pa(200), pb(200);
    for (std::size_t i = 0; i < 200; ++i) {
      pa[i] = a[perm[i]];
      pb[i] = b[perm[i]];
    }
    EXPECT_DOUBLE_EQ(iou_per_class(pa, pb, c, 3), iou_per_class(a, b, c, 3));
  }
}

TEST(Evaluate, PerfectComplementAndMonotoneInvariance) {
  std::mt19937_64 rng(6);
  auto truth = random_one_hot({1, 2, 10}, rng);
  const auto labels = one_hot_labels(truth);
  auto perfect = evaluate(truth, labels);
  EXPECT_EQ(perfect.accuracy, 1.0);
  EXPECT_EQ(perfect.mean_iou, 1.0);
  Tensor<double> complement({1, 2, 10});
  for (std::int64_t i = 0; i < 20; ++i) complement[i] = 1 - truth[i];
  EXPECT_EQ(evaluate(complement, labels).accuracy, 0.0);

  auto logits = random_tensor({2, 3, 4, 4}, rng, -3, 3);
  auto truth3 = one_hot_labels(random_one_hot({2, 3, 4, 4}, rng));
  auto base = evaluate(softmax_channels<double>(nullptr, constant(logits))->value, truth3);
  auto scaled = logits;
  for (auto& v : scaled.values()) v = 2.5 * v;
  auto cubed = logits;
  for (auto& v : cubed.values()) v = v * v * v;
  for (const auto& t : {scaled, cubed}) {
    auto m = evaluate(softmax_channels<double>(nullptr, constant(t))->value, truth3);
    EXPECT_EQ(m.accuracy, base.accuracy);
    EXPECT_EQ(m.iou, base.iou);
  }
}

TEST(Xavier, BoundMeanAndDeterminism) {
  std::mt19937_64 rng(7);
  auto t = xavier_init<double>({100000}, 3, 3, rng);
  double mean = 0;
  for (auto v : t.values()) {
    EXPECT_LE(std::abs(v), 1.0);
    mean += v;
  }
  mean /= 1e5;
  // uniform on [-1, 1] has variance 1/3
  EXPECT_LT(std::abs(mean), 3 * std::sqrt(1.0 / 3 / 1e5));
  std::mt19937_64 a(9), b(9);
  EXPECT_EQ(xavier_init<float>({7, 3}, 5, 4, a), xavier_init<float>({7, 3}, 5, 4, b));
  EXPECT_THROW(xavier_init<float>({2}, 0, 1, a), Error);
}

TEST(Adam, ScheduleValues) {
  auto p = parameter(Tensor<float>({3}));
  Adam<float> adam({{"p", p}});
  EXPECT_DOUBLE_EQ(adam.scheduled_rate(0), 1e-3);
  EXPECT_DOUBLE_EQ(adam.scheduled_rate(499), 1e-3);
  EXPECT_NEAR(adam.scheduled_rate(500), 9.7e-4, 1e-15);
  EXPECT_NEAR(adam.scheduled_rate(1500), 9.1267e-4, 1e-8);
}

TEST(Adam, ZeroGradientKeepsParameters) {
  auto p = parameter(Tensor<float>({3}, {1.f, -2.f, 3.f}));
  p->zero_grad();
  Adam<float> adam({{"p", p}});
  adam.step();
  EXPECT_EQ(p->value, Tensor<float>({3}, {1.f, -2.f, 3.f}));
  EXPECT_EQ(adam.step_count(), 1);
}

TEST(Adam, OppositeGradientsMoveOppositely) {
  auto a = parameter(Tensor<double>({2}, {0.5, 0.5}));
  auto b = parameter(Tensor<double>({2}, {0.5, 0.5}));
  a->grad = Tensor<double>({2}, {0.3, -2.0});
  b->grad = Tensor<double>({2}, {-0.3, 2.0});
  Adam<double> sa({{"a", a}}), sb({{"b", b}});
  sa.step();
  sb.step();
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(a->value[i] - 0.5, -(b->value[i] - 0.5), 1e-15);
  // the first bias-corrected step has magnitude lr
  EXPECT_NEAR(a->value[0], 0.5 - 1e-3, 1e-9);
}

TEST(Adam, NonFiniteGradientRejected) {
  auto p = parameter(Tensor<float>({2}, {1.f, 2.f}));
  p->grad = Tensor<float>({2}, {0.f, std::nanf("")});
  Adam<float> adam({{"p", p}});
  EXPECT_THROW(adam.step(), Error);
  EXPECT_EQ(p->value, Tensor<float>({2}, {1.f, 2.f}));
  EXPECT_EQ(adam.step_count(), 0);
}

namespace {

Sample random_sample(const Shape& spatial, std::mt19937_64& rng) {
  Sample s;
  Shape ishape{1};
  ishape.insert(ishape.end(), spatial.begin(), spatial.end());
  s.image = Tensor<float>(ishape);
  for (auto& v : s.image.values()) v = std::uniform_real_distribution<float>(0, 1)(rng);
  s.labels = Tensor<std::uint8_t>(spatial);
  for (auto& v : s.labels.values()) v = static_cast<std::uint8_t>(rng() % 3);
  return s;
}

std::map<int, int> histogram(const Tensor<std::uint8_t>& t) {
  std::map<int, int> h;
  for (auto v : t.values()) ++h[v];
  return h;
}

}  // namespace

TEST(Augment, IdentityAndInvolution) {
  std::mt19937_64 rng(8);
  auto s = random_sample({4, 5, 6}, rng);
  auto id = apply_symmetry(s, Symmetry::identity(3));
  EXPECT_EQ(id.image, s.image);
  EXPECT_EQ(id.labels, s.labels);
  for (int axis = 0; axis < 3; ++axis) {
    auto flip = Symmetry::identity(3);
    flip.flip[static_cast<std::size_t>(axis)] = true;
    auto twice = apply_symmetry(apply_symmetry(s, flip), flip);
    EXPECT_EQ(twice.image, s.image);
    EXPECT_EQ(twice.labels, s.labels);
  }
}

TEST(Augment, GroupSizesRespectShape) {
  EXPECT_EQ(shape_preserving_symmetries({8, 8, 8}).size(), 48u);
  EXPECT_EQ(shape_preserving_symmetries({8, 8, 4}).size(), 16u);
  EXPECT_EQ(shape_preserving_symmetries({2, 4, 8}).size(), 8u);
  EXPECT_EQ(shape_preserving_symmetries({8, 8}).size(), 8u);
}

TEST(Augment, PreservesAlignmentAndHistogram) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_sample({6, 6, 6}, rng);
    // image encodes the label so voxel alignment is checkable
    for (std::int64_t i = 0; i < s.labels.numel(); ++i) s.image[i] = s.labels[i] + 0.25f;
    auto group = shape_preserving_symmetries({6, 6, 6});
    auto g = group[rng() % group.size()];
    auto t = apply_symmetry(s, g);
    EXPECT_EQ(histogram(t.labels), histogram(s.labels));
    for (std::int64_t i = 0; i < t.labels.numel(); ++i) ASSERT_EQ(t.image[i], t.labels[i] + 0.25f);
    auto c = augment(s, {4, 4, 4}, rng);
    for (std::int64_t i = 0; i < c.labels.numel(); ++i) ASSERT_EQ(c.image[i], c.labels[i] + 0.25f);
  }
}

TEST(Augment, CropMatchesSourceRegion) {
  std::mt19937_64 rng(10);
  auto s = random_sample({5, 7, 9}, rng);
  auto c = augment(s, {5, 7, 9}, rng, false);
  EXPECT_EQ(c.image, s.image);
  EXPECT_THROW(augment(s, {6, 7, 9}, rng), Error);
  auto small = augment(s, {2, 3, 4}, rng, false);
  EXPECT_EQ(small.labels.shape(), (Shape{2, 3, 4}));
  // a 2D sample keeps working
  auto s2 = random_sample({6, 6}, rng);
  EXPECT_EQ(augment(s2, {4, 4}, rng).image.shape(), (Shape{1, 4, 4}));
}

namespace {

NetworkConfig tiny_config() {
  NetworkConfig c;
  c.levels = {1, 1};
  c.lu_layers = 1;
  c.growth_rate = 4;
  c.input_features = 8;
  c.num_classes = 2;
  c.dropout_rate = 0.0;
  return c;
}

std::vector<Sample> balanced_dataset(std::mt19937_64& rng) {
  std::vector<Sample> out;
  for (int i = 0; i < 2; ++i) {
    auto s = random_sample({8, 8, 8}, rng);
    for (std::int64_t v = 0; v < s.labels.numel(); ++v) {
      s.labels[v] = static_cast<std::uint8_t>(v % 2);
      s.image[v] = s.labels[v] ? 0.8f : 0.2f;
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(Train, InitialCrossEntropyNearLn2) {
  std::mt19937_64 rng(11);
  auto data = balanced_dataset(rng);
  auto net = build_network<float>(tiny_config(), 3);
  TrainOptions o;
  o.iterations = 1;
  o.crop = {8, 8, 8};
  o.loss = LossKind::cross_entropy;
  auto r = train(net, data, {}, o);
  EXPECT_NEAR(r.history[0].loss, std::log(2.0), 0.2 * std::log(2.0));
}

TEST(Train, LossDecreasesAndHistoryDeterministic) {
  std::mt19937_64 rng(12);
  auto data = balanced_dataset(rng);
  const auto dir = std::filesystem::temp_directory_path() / "dvnet_train_test";
  std::filesystem::create_directories(dir);
  auto run = [&](int threads) {
    execution().threads = threads;
    auto net = build_network<float>(tiny_config(), 3);
    TrainOptions o;
    o.iterations = 40;
    o.crop = {8, 8, 8};
    o.validate_every = 20;
    o.checkpoint_path = (dir / "best.ckpt").string();
    o.history_path = (dir / "history.csv").string();
    auto r = train(net, data, data, o);
    execution().threads = 1;
    return r;
  };
  auto a = run(1);
  auto b = run(2);
  ASSERT_EQ(a.history.size(), 40u);
  EXPECT_LT(a.history.back().loss, a.history.front().loss);
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].loss, b.history[i].loss);
  EXPECT_EQ(a.validation.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(dir / "best.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "history.csv"));
  auto best = load_network<float>((dir / "best.ckpt").string());
  EXPECT_NEAR(validate(best, data).mean_iou, a.best_validation_iou, 1e-12);
  std::filesystem::remove_all(dir);
}

TEST(Train, DivergenceAbortsWithIteration) {
  std::mt19937_64 rng(13);
  auto data = balanced_dataset(rng);
  data[0].image[0] = std::nanf("");
  data[1].image[0] = std::nanf("");
  auto net = build_network<float>(tiny_config(), 3);
  TrainOptions o;
  o.iterations = 3;
  o.crop = {8, 8, 8};
  o.augment = false;
  try {
    train(net, data, {}, o);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos) << e.what();
  }
}

TEST(Train, InverseFrequencyWeightsHaveMeanOne) {
  std::mt19937_64 rng(14);
  std::vector<Sample> data{random_sample({4, 4, 4}, rng)};
  for (std::int64_t i = 0; i < 64; ++i) data[0].labels[i] = i < 48 ? 0 : (i < 60 ? 1 : 2);
  auto w = inverse_frequency_weights(data, 3);
  EXPECT_NEAR((w[0] + w[1] + w[2]) / 3, 1.0, 1e-12);
  EXPECT_NEAR(w[0] * 48, w[2] * 4, 1e-9);
}
