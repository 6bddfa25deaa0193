#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "dvnet/net/network.hpp"

using namespace dvnet;

namespace {

NetworkConfig small_config() {
  NetworkConfig c;
  c.levels = {1, 2};
  c.lu_layers = 2;
  c.growth_rate = 4;
  c.input_features = 8;
  c.dropout_rate = 0.0;
  return c;
}

Tensor<float> random_volume(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Tensor<float> t(shape);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

}  // namespace

TEST(Plan, V3MatchesFeatureMapTable) {
  const auto plan = plan_architecture(NetworkConfig::preset("v3"));
  EXPECT_EQ(plan.depths(), (std::vector<int>{64, 128, 160, 208, 264, 324, 418, 641, 616, 520, 412, 315, 3}));
  EXPECT_EQ(plan.divisors(), (std::vector<std::int64_t>{1, 1, 2, 4, 8, 16, 32, 16, 8, 4, 2, 1, 1}));
}

TEST(Plan, HandRecurrenceSingleLevel) {
  NetworkConfig c;
  c.levels = {2};
  c.lu_layers = 2;
  c.growth_rate = 4;
  c.input_features = 8;
  c.theta_down = 0.5;
  c.theta_up = 0.5;
  const auto plan = plan_architecture(c);
  EXPECT_EQ(plan.depths(), (std::vector<int>{8, 16, 16, 32, 3}));
  EXPECT_EQ(plan.divisors(), (std::vector<std::int64_t>{1, 1, 2, 1, 1}));
}

TEST(Plan, UnitThetaKeepsDepth) {
  NetworkConfig c = small_config();
  c.theta_down = 1.0;
  c.theta_up = 1.0;
  const auto d = plan_architecture(c).depths();
  // 8 -> 12 -> 12+8=20 -> LU 20+8=28 -> TU 28 + skip 20 + 8 = 56 -> TU 56 + 12 + 4 = 72
  EXPECT_EQ(d, (std::vector<int>{8, 12, 20, 28, 56, 72, 3}));
}

TEST(Plan, ZeroCompressionRejected) {
  NetworkConfig c = small_config();
  c.theta_down = 0.01;
  EXPECT_THROW(plan_architecture(c), Error);
  c = small_config();
  c.growth_rate = 0;
  EXPECT_THROW(plan_architecture(c), Error);
}

TEST(Plan, PrintsTable) {
  std::ostringstream os;
  print_plan(os, plan_architecture(NetworkConfig::preset("v3")));
  const auto s = os.str();
  EXPECT_NE(s.find("TD + LU(16 BBs)"), std::string::npos);
  EXPECT_NE(s.find("X/32"), std::string::npos);
}

TEST(Config, TextRoundTripAndPresets) {
  auto c = NetworkConfig::preset("v2");
  EXPECT_EQ(NetworkConfig::from_text(c.to_text()), c);
  EXPECT_EQ(NetworkConfig::from_text("preset=v1\ndropout_rate=0\n").growth_rate, 8);
  EXPECT_THROW(NetworkConfig::from_text("bogus=1\n"), Error);
  EXPECT_THROW(NetworkConfig::from_text("levels=3,x\n"), Error);
  EXPECT_THROW(NetworkConfig::preset("v9"), Error);
}

TEST(Network, ParameterCountsFrozen) {
  // independent count in a reference script over the same wiring
  EXPECT_EQ(count_parameters(build_network<float>(NetworkConfig::preset("v3-2d"), 1)), 5426304);
  EXPECT_EQ(count_parameters(build_network<float>(NetworkConfig::preset("v1"), 1)), 2724637);
  EXPECT_EQ(count_parameters(build_network<float>(NetworkConfig::preset("v2"), 1)), 9511437);
  EXPECT_EQ(count_parameters(build_network<float>(NetworkConfig::preset("v3"), 1)), 11246406);
  EXPECT_EQ(count_parameters(build_network<float>(NetworkConfig::preset("desk"), 1)), 103643);
}

TEST(Network, CountIndependentOfSeedAndMonotoneInGrowth) {
  auto c = small_config();
  const auto base = count_parameters(build_network<float>(c, 1));
  EXPECT_EQ(count_parameters(build_network<float>(c, 99)), base);
  auto prev = base;
  for (int k = 5; k <= 9; ++k) {
    c.growth_rate = k;
    const auto n = count_parameters(build_network<float>(c, 1));
    EXPECT_GT(n, prev);
    prev = n;
  }
}

TEST(Network, SameSeedSameParameters) {
  auto a = build_network<float>(small_config(), 5);
  auto b = build_network<float>(small_config(), 5);
  auto c = build_network<float>(small_config(), 6);
  auto pa = a.named_parameters(), pb = b.named_parameters(), pc = c.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(pa[i].second->value, pb[i].second->value);
    any_diff |= !(pa[i].second->value == pc[i].second->value);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Network, DenseBlockAddsLayersTimesGrowth) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> pick(1, 5);
  for (int trial = 0; trial < 6; ++trial) {
    NetworkConfig c;
    c.levels = {pick(rng)};
    c.lu_layers = pick(rng);
    c.growth_rate = pick(rng);
    c.input_features = 4;
    c.theta_down = 1.0;
    c.theta_up = 1.0;
    c.dropout_rate = 0;
    auto net = build_network<float>(c, 1);
    std::vector<StageShape> realized;
    ForwardOptions<float> o;
    o.mode = Mode::train;
    o.realized = &realized;
    forward(net, constant(random_volume({1, 1, 4, 4, 4}, trial)), o);
    EXPECT_EQ(realized[1].depth - realized[0].depth, c.levels[0] * c.growth_rate);
  }
}

TEST(Network, RealizedShapesFollowPlan) {
  std::mt19937_64 rng(18);
  std::uniform_int_distribution<int> layers(1, 3), growth(1, 6), nlevels(1, 4);
  std::uniform_real_distribution<double> theta(0.3, 1.0);
  for (int trial = 0; trial < 6; ++trial) {
    NetworkConfig c;
    c.levels.resize(static_cast<std::size_t>(nlevels(rng)));
    for (auto& l : c.levels) l = layers(rng);
    c.lu_layers = layers(rng);
    c.growth_rate = growth(rng);
    c.input_features = 6;
    c.theta_down = theta(rng);
    c.theta_up = theta(rng);
    c.num_classes = 2 + trial % 3;
    c.dropout_rate = 0;
    c.spatial_rank = trial % 2 ? 2 : 3;
    auto plan = plan_architecture(c);
    auto net = build_network<float>(c, 1);
    std::vector<StageShape> realized;
    ForwardOptions<float> o;
    o.mode = Mode::train;
    o.realized = &realized;
    Shape in{2, 1};
    for (int a = 0; a < c.spatial_rank; ++a) in.push_back(16);
    forward(net, constant(random_volume(in, trial)), o);
    ASSERT_EQ(realized.size(), plan.rows.size());
    for (std::size_t r = 0; r < plan.rows.size(); ++r) {
      EXPECT_EQ(realized[r].depth, plan.rows[r].depth) << plan.rows[r].stage;
      for (auto e : realized[r].spatial) EXPECT_EQ(e, 16 / plan.rows[r].divisor) << plan.rows[r].stage;
    }
  }
}

TEST(Network, ForwardRejectsIndivisibleExtents) {
  auto net = build_network<float>(small_config(), 1);
  ForwardOptions<float> o;
  o.mode = Mode::train;
  EXPECT_THROW(forward(net, constant(Tensor<float>({1, 1, 8, 8, 6})), o), Error);
  EXPECT_THROW(forward(net, constant(Tensor<float>({1, 2, 8, 8, 8})), o), Error);
  EXPECT_THROW(forward(net, constant(Tensor<float>({1, 1, 8, 8})), o), Error);
}

TEST(Network, ZeroParametersGiveUniformProbabilities) {
  auto c = small_config();
  c.num_classes = 4;
  auto net = build_network<float>(c, 1);
  net.visit_parameters([](const std::string&, const Var<float>& v) { v->value.fill(0.f); });
  ForwardOptions<float> o;
  o.mode = Mode::train;
  auto p = forward(net, constant(random_volume({1, 1, 8, 8, 8}, 3)), o);
  for (auto v : p->value.values()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Network, EvalForwardDeterministicAndNormalized) {
  auto net = build_network<float>(small_config(), 2);
  ForwardOptions<float> train;
  train.mode = Mode::train;
  auto x = random_volume({2, 1, 8, 8, 8}, 4);
  forward(net, constant(x), train);
  auto a = predict(net, x);
  auto b = predict(net, x);
  EXPECT_EQ(a, b);
  const auto v = a.spatial_size();
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t i = 0; i < v; ++i) {
      double s = 0;
      for (std::int64_t c = 0; c < 3; ++c) s += a[(n * 3 + c) * v + i];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Network, PredictNeedsTrainedStatistics) {
  auto net = build_network<float>(small_config(), 2);
  EXPECT_THROW(predict(net, random_volume({1, 1, 8, 8, 8}, 1)), Error);
}

TEST(Network, CheckpointRoundTripBitExact) {
  auto net = build_network<float>(small_config(), 3);
  ForwardOptions<float> train;
  train.mode = Mode::train;
  auto x = random_volume({2, 1, 8, 8, 8}, 5);
  forward(net, constant(x), train);
  const auto path = (std::filesystem::temp_directory_path() / "dvnet_net_ckpt.bin").string();
  save_network(net, path);
  auto back = load_network<float>(path);
  EXPECT_EQ(back.config, net.config);
  EXPECT_EQ(predict(back, x), predict(net, x));
  std::filesystem::remove(path);
}

TEST(Network, LongSkipExtentsMatchEncoder) {
  auto c = small_config();
  c.levels = {1, 1, 1};
  auto net = build_network<float>(c, 1);
  std::vector<StageShape> realized;
  ForwardOptions<float> o;
  o.mode = Mode::train;
  o.realized = &realized;
  forward(net, constant(random_volume({1, 1, 16, 8, 8}, 1)), o);
  // rows: input, enc0..2, lu, dec2..0, output
  for (int i = 0; i < 3; ++i) EXPECT_EQ(realized[1 + i].spatial, realized[7 - i].spatial);
}

TEST(Network, V3ForwardOnSampleVolume) {
  auto net = build_network<float>(NetworkConfig::preset("v3"), 1);
  std::vector<StageShape> realized;
  ForwardOptions<float> o;
  o.mode = Mode::train;
  o.realized = &realized;
  std::mt19937_64 rng(1);
  o.dropout_rng = &rng;
  auto p = forward(net, constant(random_volume({1, 1, 64, 64, 32}, 1)), o);
  EXPECT_EQ(p->value.shape(), (Shape{1, 3, 64, 64, 32}));
  const auto plan = plan_architecture(net.config);
  for (std::size_t r = 0; r < plan.rows.size(); ++r) EXPECT_EQ(realized[r].depth, plan.rows[r].depth);
  const auto v = p->value.spatial_size();
  for (std::int64_t i = 0; i < v; i += 97)
    EXPECT_NEAR(p->value[i] + p->value[v + i] + p->value[2 * v + i], 1.0, 1e-6);
}
