#include <gtest/gtest.h>

#include "mlp3d/block.hpp"
#include "mlp3d/errors.hpp"
#include "mlp3d/grad_check.hpp"
#include "mlp3d/network.hpp"
#include "mlp3d/ops.hpp"
#include "test_util.hpp"

namespace mlp3d {
namespace {

using testing::random_tensor;
using T64 = Tensor<double>;

BlockShape shape_of(std::size_t c, GtmConfig time, std::size_t ratio = 4, double drop = 0.0) {
  BlockShape s;
  s.mixing.channels = c;
  s.mixing.window_h = 2;
  s.mixing.window_w = 2;
  s.mixing.time = time;
  s.mlp_ratio = ratio;
  s.drop_path_rate = drop;
  return s;
}

void zero(T64& t) {
  for (auto& e : t.mutable_data()) e = 0.0;
}

TEST(ChannelMlp, ZeroWeightsGiveZero) {
  auto p = make_block_params<double>(shape_of(3, {}), nullptr);
  std::mt19937_64 rng(1);
  auto x = random_tensor<double>({2, 2, 4, 3}, rng);
  for (double v : channel_mlp_forward(x, p).values()) EXPECT_EQ(v, 0.0);
}

TEST(ChannelMlp, IdentityLayersAtZeroInput) {
  auto p = make_block_params<double>(shape_of(2, {}, 1), nullptr);
  p.fc1_weight = T64::from({2, 2}, {1, 0, 0, 1});
  p.fc2_weight = T64::from({2, 2}, {1, 0, 0, 1});
  for (double v : channel_mlp_forward(T64::zeros({1, 1, 1, 2}), p).values()) EXPECT_EQ(v, 0.0);
}

TEST(ChannelMlp, ActsPerToken) {
  std::mt19937_64 rng(2);
  auto p = make_block_params<double>(shape_of(3, {}), &rng, 0.5);
  auto x = random_tensor<double>({2, 2, 4, 3}, rng);
  const auto y = channel_mlp_forward(x, p);
  auto probe = x.clone();
  probe.mutable_data()[5 * 3 + 1] += 0.5;
  const auto y2 = channel_mlp_forward(probe, p);
  for (std::size_t i = 0; i < y.numel(); ++i) {
    if (i / 3 == 5)
      EXPECT_NE(y.at(i), y2.at(i));
    else
      EXPECT_EQ(y.at(i), y2.at(i));
  }
  EXPECT_THROW(channel_mlp_forward(T64::zeros({2, 4}), p), DimensionError);
}

TEST(Block, ZeroBranchesAreTheIdentity) {
  std::mt19937_64 rng(3);
  auto p = make_block_params<double>(shape_of(3, {GtmKind::shift_window, 2, true}), &rng);
  zero(p.mixing.proj_weight);
  zero(p.fc2_weight);
  auto x = random_tensor<double>({2, 2, 2, 4, 3}, rng);
  EXPECT_EQ(block_forward(x, p).values(), x.values());
}

TEST(Block, EvalIsDeterministic) {
  std::mt19937_64 rng(4);
  auto p = make_block_params<double>(shape_of(4, {GtmKind::long_range, 2, true}, 4, 0.3), &rng);
  auto x = random_tensor<double>({2, 2, 2, 4, 4}, rng);
  const auto a = block_forward(x, p, p.mixing.time_config, false);
  const auto b = block_forward(x, p, p.mixing.time_config, false);
  EXPECT_EQ(a.values(), b.values());
}

TEST(Block, DropPathNeedsARandomStream) {
  auto p = make_block_params<double>(shape_of(2, {GtmKind::short_range, 2, true}, 4, 0.5), nullptr);
  EXPECT_THROW(block_forward(T64::zeros({1, 2, 2, 2, 2}), p, p.mixing.time_config, true), ParameterError);
  EXPECT_THROW(make_block_params<double>(shape_of(2, {}, 4, 1.0), nullptr), ConfigError);
  EXPECT_THROW(make_block_params<double>(shape_of(2, {}, 0), nullptr), ConfigError);
}

TEST(Block, DropPathDropsWholeSamples) {
  std::mt19937_64 rng(5);
  auto p = make_block_params<double>(shape_of(2, {GtmKind::short_range, 2, true}, 2, 0.5), &rng, 0.5);
  auto x = random_tensor<double>({16, 2, 2, 2, 2}, rng);
  const auto full = block_forward(x, p, p.mixing.time_config, false);
  std::mt19937_64 stream(9);
  const auto y = block_forward(x, p, p.mixing.time_config, true, &stream);
  // A sample whose both branches were dropped comes out unchanged; one where
  // both were kept is the eval output with each branch doubled, never equal.
  const std::size_t per = x.numel() / 16;
  std::size_t identical = 0;
  for (std::size_t b = 0; b < 16; ++b) {
    bool same = true;
    for (std::size_t i = 0; i < per; ++i) same = same && y.at(b * per + i) == x.at(b * per + i);
    identical += same;
  }
  EXPECT_GT(identical, 0u);
  EXPECT_LT(identical, 16u);
  EXPECT_NE(y.values(), full.values());
}

TEST(Block, PreservesTimeConstancyWithoutCoupling) {
  std::mt19937_64 rng(6);
  for (GtmConfig cfg : {GtmConfig{GtmKind::short_range, 2, true}, GtmConfig{GtmKind::shift_token, 4, true},
                        GtmConfig{GtmKind::long_range, 2, true}}) {
    auto p = make_block_params<double>(shape_of(3, cfg), &rng, 0.5);
    for (int d = p.mixing.time.min_offset; d <= p.mixing.time.max_offset(); ++d)
      if (d != 0) zero(p.mixing.time.offset(d));
    // One frame repeated across time.
    auto frame = random_tensor<double>({1, 2, 3, 1, 3}, rng);
    auto x = concat<double>({frame, frame, frame, frame}, 3);
    EXPECT_EQ(time_constancy_deviation(block_forward(x, p, cfg, false)), 0.0);
  }
}

TEST(Block, GradientCheck) {
  std::mt19937_64 rng(7);
  auto p = make_block_params<double>(shape_of(2, {GtmKind::shift_window, 2, true}, 2), &rng, 0.5);
  for (auto* t : {&p.ln1_beta, &p.ln2_beta, &p.fc1_bias, &p.fc2_bias})
    for (auto& e : t->mutable_data()) e = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  auto x = random_tensor<double>({1, 2, 2, 4, 2}, rng, -1, 1, true);
  auto probe = random_tensor<double>(x.shape(), rng);
  auto params = p.named_parameters("block");
  params.push_back({"x", x});
  auto report = grad_check([&] { return sum_all(mul(block_forward(x, p), probe)); }, params);
  EXPECT_TRUE(report.passed) << report.max_rel_error();
}

}  // namespace
}  // namespace mlp3d
