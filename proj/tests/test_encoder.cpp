#include <gtest/gtest.h>

#include <random>

#include "rcn/encoder.hpp"
#include "rcn/model.hpp"

using namespace rcn;

namespace {

EncoderParams<double> random_encoder(const EncoderGeometry& g, std::uint64_t seed) {
  auto p = EncoderParams<double>::zeros(g);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  for (std::size_t s = 0; s < kEncoderStages; ++s) {
    for (auto& v : p.kernels[s].data()) v = d(rng);
    for (auto& v : p.biases[s].data()) v = d(rng);
  }
  return p;
}

Tensor<double> random_frame(const EncoderGeometry& g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0, 1);
  Tensor<double> f({3, g.height, g.width});
  for (auto& v : f.data()) v = d(rng);
  return f;
}

}  // namespace

TEST(Encoder, FullResolutionShapeChain) {
  EncoderGeometry g;
  const std::vector<Shape> expect{{32, 158, 58}, {32, 79, 29}, {32, 77, 27}, {32, 38, 13},
                                  {32, 36, 11},  {32, 18, 5},  {32, 16, 3}};
  EXPECT_EQ(g.stage_shapes(), expect);
  const auto taps = g.tap_shapes();
  EXPECT_EQ(taps[0], (Shape{32, 79, 29}));
  EXPECT_EQ(taps[1], (Shape{32, 38, 13}));
  EXPECT_EQ(taps[2], (Shape{32, 16, 3}));
  EXPECT_NO_THROW(g.validate());
}

TEST(Encoder, ToyGeometriesWithPadding) {
  EncoderGeometry g{32, 16, {8, 8, 8, 8}, 1};
  const auto taps = g.tap_shapes();
  EXPECT_EQ(taps[0], (Shape{8, 16, 8}));
  EXPECT_EQ(taps[1], (Shape{8, 8, 4}));
  EXPECT_EQ(taps[2], (Shape{8, 4, 2}));
  EXPECT_NO_THROW(g.validate());
  EncoderGeometry tiny{16, 8, {4, 4, 4, 4}, 1};
  EXPECT_EQ(tiny.tap_shapes()[2], (Shape{4, 2, 1}));
  EXPECT_THROW((EncoderGeometry{16, 8, {4, 4, 4, 4}, 0}.validate()), ConfigError);
}

TEST(Encoder, StageZeroParameterCount) {
  auto p = EncoderParams<float>::zeros(EncoderGeometry{});
  EXPECT_EQ(p.stage_param_count(0), 896u);
  for (std::size_t s = 0; s < kEncoderStages; ++s) {
    EXPECT_EQ(p.kernels[s].extent(2), 3u);
    EXPECT_EQ(p.kernels[s].extent(3), 3u);
    EXPECT_EQ(p.kernels[s].extent(1), s == 0 ? 3u : p.kernels[s - 1].extent(0));
  }
}

TEST(Encoder, ZeroFrameGivesZeroPyramidEvenWithScaledKernels) {
  EncoderGeometry g{32, 16, {4, 4, 4, 4}, 1};
  auto p = random_encoder(g, 1);
  for (auto& b : p.biases)
    for (auto& v : b.data()) v = 0;
  Tape<double> tape(false);
  for (double factor : {1.0, 2.0}) {
    for (auto& k : p.kernels)
      for (auto& v : k.data()) v *= factor;
    auto pyr = encode_frame(tape, Tensor<double>({3, 32, 16}), p, g);
    ASSERT_EQ(pyr.maps.size(), kPyramidLevels);
    for (const auto& m : pyr.maps)
      for (double v : m.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Encoder, FullResolutionForwardMatchesTaps) {
  EncoderGeometry g;
  auto p = random_encoder(g, 2);
  std::mt19937_64 rng(3);
  Tape<double> tape(false);
  auto pyr = encode_frame(tape, random_frame(g, rng), p, g);
  const auto taps = g.tap_shapes();
  for (std::size_t l = 0; l < kPyramidLevels; ++l) EXPECT_EQ(pyr.maps[l].shape(), taps[l]);
}

TEST(Encoder, WrongFrameSizeIsDimensionError) {
  EncoderGeometry g{32, 16, {4, 4, 4, 4}, 1};
  auto p = EncoderParams<double>::zeros(g);
  Tape<double> tape(false);
  EXPECT_THROW(encode_frame(tape, Tensor<double>({3, 30, 16}), p, g), DimensionError);
}

TEST(Encoder, SequenceIsStatelessAndPermutes) {
  EncoderGeometry g{32, 16, {4, 4, 4, 4}, 1};
  auto p = random_encoder(g, 4);
  std::mt19937_64 rng(5);
  std::vector<Tensor<double>> frames;
  for (int t = 0; t < 4; ++t) frames.push_back(random_frame(g, rng));
  Tape<double> tape(false);
  auto fwd = encode_sequence(tape, frames, p, g);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<Tensor<double>> permuted;
  for (auto i : perm) permuted.push_back(frames[i]);
  auto back = encode_sequence(tape, permuted, p, g);
  ASSERT_EQ(back.size(), 4u);
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t l = 0; l < kPyramidLevels; ++l)
      for (std::size_t k = 0; k < back[i].maps[l].size(); ++k)
        ASSERT_EQ(back[i].maps[l][k], fwd[perm[i]].maps[l][k]);
  auto single = encode_frame(tape, frames[0], p, g);
  for (std::size_t l = 0; l < kPyramidLevels; ++l)
    for (std::size_t k = 0; k < single.maps[l].size(); ++k) ASSERT_EQ(single.maps[l][k], fwd[0].maps[l][k]);
}

TEST(Encoder, TwentyFramesGiveTwentyPyramids) {
  EncoderGeometry g{16, 8, {4, 4, 4, 4}, 1};
  auto p = random_encoder(g, 6);
  std::vector<Tensor<double>> frames(20, Tensor<double>({3, 16, 8}, 0.5));
  Tape<double> tape(false);
  EXPECT_EQ(encode_sequence(tape, frames, p, g).size(), 20u);
  EXPECT_THROW(encode_sequence(tape, {}, p, g), DimensionError);
}

TEST(Encoder, BranchesShareTheEncoderObject) {
  Config cfg;
  cfg.height = 16;
  cfg.width = 8;
  cfg.encoder_channels = {4, 4, 4, 4};
  cfg.encoder_padding = 1;
  cfg.channels = {4, 8, 8};
  cfg.kernel_input = cfg.kernel_hidden = 3;
  Network<float> net{cfg, init_params<float>(cfg, 1)};
  Siamese<float> siamese(net);
  for (std::size_t s = 0; s < kEncoderStages; ++s)
    EXPECT_TRUE(siamese.branch_params(0).encoder.kernels[s].same(siamese.branch_params(1).encoder.kernels[s]));
}
