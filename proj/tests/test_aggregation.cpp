#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fd.hpp"
#include "rcn/aggregation.hpp"

using namespace rcn;
using rcn::testing::random_tensor;

namespace {

HiddenState<double> constant_state(std::size_t c, double value, std::size_t layer = 0) {
  return {Tensor<double>({c, 3, 2}, value), layer, 0};
}

SimilarityParams<double> sim_params(std::vector<double> v, double c) {
  auto p = SimilarityParams<double>::zeros(v.size());
  std::copy(v.begin(), v.end(), p.v.data().begin());
  p.c[0] = c;
  return p;
}

}  // namespace

TEST(LayerPooling, SingleLayerIsSpatialMean) {
  std::mt19937_64 rng(1);
  HiddenState<double> s{random_tensor({4, 3, 5}, rng), 0, 0};
  Tape<double> tape(false);
  auto f = pool_layers_last_step(tape, {s});
  auto expect = avg_pool_spatial(tape, s.h);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(f.h_bar[i], expect[i]);
  EXPECT_EQ(f.provenance, PoolingMode::kLastStep);
}

TEST(LayerPooling, ConstantLayersAverage) {
  Tape<double> tape(false);
  auto f = pool_layers_last_step(tape, {constant_state(3, 0.2), constant_state(3, 0.6, 1)});
  for (double v : f.h_bar.data()) EXPECT_DOUBLE_EQ(v, 0.4);
  auto z = pool_layers_last_step(tape, {constant_state(3, 0.0), constant_state(3, 0.0, 1)});
  for (double v : z.h_bar.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerPooling, MismatchedWidthsNeedProjection) {
  Tape<double> tape(false);
  const std::vector<HiddenState<double>> states{constant_state(2, 0.5), constant_state(4, 0.25, 1)};
  EXPECT_THROW(pool_layers_last_step(tape, states), ConfigError);
  const auto proj = make_projections<double>({2, 4}, 4);
  auto f = pool_layers_last_step(tape, states, proj);
  ASSERT_EQ(f.h_bar.size(), 4u);
  // identity-padded projections: (0.5 + 0.25)/2 on the shared channels, 0.25/2 beyond
  EXPECT_DOUBLE_EQ(f.h_bar[0], 0.375);
  EXPECT_DOUBLE_EQ(f.h_bar[1], 0.375);
  EXPECT_DOUBLE_EQ(f.h_bar[2], 0.125);
  EXPECT_DOUBLE_EQ(f.h_bar[3], 0.125);
}

TEST(TemporalPooling, Examples) {
  Tape<double> tape(false);
  auto avg = pool_temporal(tape, {Tensor<double>({2}, {1, 0}), Tensor<double>({2}, {0, 1})}, PoolingMode::kAverage);
  EXPECT_DOUBLE_EQ(avg[0], 0.5);
  EXPECT_DOUBLE_EQ(avg[1], 0.5);
  auto mx = pool_temporal(tape, {Tensor<double>({2}, {1, 3}), Tensor<double>({2}, {2, 1})}, PoolingMode::kMax);
  EXPECT_EQ(mx[0], 2.0);
  EXPECT_EQ(mx[1], 3.0);
  EXPECT_THROW(pool_temporal(tape, {}, PoolingMode::kMax), DimensionError);
}

TEST(SequenceFeature, SingleStepTemporalPoolingIsNormalisedDescriptor) {
  Tape<double> tape(false);
  StackStates<double> states{{{Tensor<double>({2, 1, 1}, {3, 4}), 0, 0}}};
  for (auto mode : {PoolingMode::kAverage, PoolingMode::kMax}) {
    auto f = sequence_feature(tape, states, {}, mode);
    EXPECT_DOUBLE_EQ(f.h_bar[0], 0.6);
    EXPECT_DOUBLE_EQ(f.h_bar[1], 0.8);
    EXPECT_EQ(f.provenance, mode);
  }
}

TEST(TemporalPooling, ModesAgreeOnConstantSequences) {
  std::mt19937_64 rng(2);
  auto d = random_tensor({6}, rng);
  Tape<double> tape(false);
  auto avg = pool_temporal(tape, {d, d, d}, PoolingMode::kAverage);
  auto mx = pool_temporal(tape, {d, d, d}, PoolingMode::kMax);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(avg[i], mx[i], 1e-15);
}

TEST(Similarity, Examples) {
  Tape<double> tape(false);
  auto p = sim_params({0.3, -2.0}, 0.0);
  EXPECT_EQ(similarity(tape, Tensor<double>({2}), Tensor<double>({2}, {5, 7}), p).item(), 0.5);
  EXPECT_NEAR(similarity(tape, Tensor<double>({1}, {2}), Tensor<double>({1}, {3}), sim_params({1}, 0)).item(),
              0.99753, 5e-6);
}

TEST(Similarity, SymmetricRangeAndMonotone) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pos(0.1, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = random_tensor({5}, rng, -3, 3);
    auto b = random_tensor({5}, rng, -3, 3);
    auto p = sim_params({pos(rng), pos(rng), pos(rng), pos(rng), pos(rng)}, 0.1);
    Tape<double> tape(false);
    const double ab = similarity(tape, a, b, p).item();
    EXPECT_EQ(ab, similarity(tape, b, a, p).item());
    EXPECT_GT(ab, 0.0);
    EXPECT_LT(ab, 1.0);
    Tensor<double> a2 = a.clone();
    a2[0] += b[0] >= 0 ? 0.5 : -0.5;
    EXPECT_GE(similarity(tape, a2, b, p).item(), ab);
  }
}

TEST(Similarity, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  auto a = random_tensor({4}, rng);
  auto b = random_tensor({4}, rng);
  auto p = SimilarityParams<double>::zeros(4);
  for (auto& v : p.v.data()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  p.c[0] = 0.2;
  const auto f = [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
    return similarity(t, in[0], in[1], SimilarityParams<double>{in[2], in[3]});
  };
  EXPECT_LT(rcn::testing::max_grad_error(f, {a, b, p.v, p.c}, 1e-4), 1e-3);
}

TEST(Similarity, ShapeMismatchIsDimensionError) {
  Tape<double> tape(false);
  EXPECT_THROW(similarity(tape, Tensor<double>({2}), Tensor<double>({3}), SimilarityParams<double>::zeros(2)),
               DimensionError);
}

TEST(SequenceFeature, EveryModeGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  StackStates<double> states(3);
  std::vector<Tensor<double>> leaves;
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t l = 0; l < 2; ++l) {
      auto h = random_tensor({l == 0 ? 2u : 3u, 2, 2}, rng);
      states[t].push_back({h, l, t});
      leaves.push_back(h);
    }
  auto proj = make_projections<double>({2, 3}, 3);
  for (auto& p : proj) leaves.push_back(p);
  for (auto mode : {PoolingMode::kAverage, PoolingMode::kMax, PoolingMode::kLastStep}) {
    const auto f = [&](Tape<double>& t, const std::vector<Tensor<double>>&) {
      return rcn::testing::weighted_sum(t, sequence_feature(t, states, proj, mode).h_bar);
    };
    EXPECT_LT(rcn::testing::max_grad_error(f, leaves, 1e-4), 1e-3) << to_string(mode);
  }
}
