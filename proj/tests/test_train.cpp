#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "mlp3d/errors.hpp"
#include "mlp3d/ops.hpp"
#include "mlp3d/train.hpp"

namespace mlp3d {
namespace {

// Two classes: reddish vs greenish clips with per-pixel noise.
Dataset colour_task(std::size_t n, std::uint64_t seed) {
  Dataset d;
  d.height = d.width = 32;
  d.time = 4;
  d.num_classes = 2;
  d.labels.resize(n);
  d.clips.resize(n * d.clip_numel());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 0.4f);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = i % 2;
    auto clip = d.mutable_clip(i);
    for (std::size_t p = 0; p < clip.size(); p += 3) {
      clip[p] = u(rng) + (d.labels[i] == 0 ? 0.5f : 0.0f);
      clip[p + 1] = u(rng) + (d.labels[i] == 1 ? 0.5f : 0.0f);
      clip[p + 2] = u(rng);
    }
  }
  return d;
}

NetworkSpec toy_spec() { return make_variant("micro", 32, 32, 4, 2); }

TEST(LearningRate, WarmupThenCosineToZero) {
  TrainConfig c;
  c.base_lr = 1.0;
  c.warmup_epochs = 1.0;
  c.total_epochs = 3;
  EXPECT_DOUBLE_EQ(lr_at(0, 10, c), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(5, 10, c), 0.5);
  EXPECT_DOUBLE_EQ(lr_at(10, 10, c), 1.0);
  EXPECT_EQ(lr_at(29, 10, c), 0.0);
  // cosine midpoint between step 10 and step 29
  c.total_epochs = 3;
  c.warmup_epochs = 0.0;
  EXPECT_DOUBLE_EQ(lr_at(0, 11, c), 1.0);
  EXPECT_NEAR(lr_at(16, 11, c), 0.5, 1e-12);
  for (std::size_t s = 1; s < 33; ++s) EXPECT_LE(lr_at(s, 11, c), lr_at(s - 1, 11, c));
}

TEST(LearningRate, ValidatesConfig) {
  TrainConfig c;
  c.warmup_epochs = 20.0;
  EXPECT_THROW(validate_train(c), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(validate_train(c), ConfigError);
  c = {};
  c.label_smoothing = 1.0;
  EXPECT_THROW(validate_train(c), ConfigError);
}

std::vector<NamedTensor<double>> one_param(std::vector<double> v) {
  const std::size_t n = v.size();
  auto t = Tensor<double>::from({n}, std::move(v));
  t.set_requires_grad(true);
  return {{"p", t}};
}

TEST(AdamW, FirstStepMatchesHandFormula) {
  TrainConfig c;
  c.weight_decay = 0.1;
  auto params = one_param({1.0, -2.0, 0.5});
  auto g = params[0].tensor.mutable_grad();
  g[0] = 0.3;
  g[1] = -4.0;
  g[2] = 0.0;
  OptimizerState<double> state;
  const double lr = 0.01;
  adamw_step(params, state, lr, c);
  const auto v = params[0].tensor.values();
  // Bias-corrected moments give m_hat = g, v_hat = g^2 on the first step.
  EXPECT_NEAR(v[0], 1.0 * (1 - lr * 0.1) - lr * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(v[1], -2.0 * (1 - lr * 0.1) + lr * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_DOUBLE_EQ(v[2], 0.5 * (1 - lr * 0.1));
  EXPECT_EQ(state.step, 1u);
}

TEST(AdamW, SecondStepUsesRunningMoments) {
  TrainConfig c;
  c.weight_decay = 0.0;
  auto params = one_param({0.0});
  OptimizerState<double> state;
  params[0].tensor.mutable_grad()[0] = 1.0;
  adamw_step(params, state, 0.1, c);
  params[0].tensor.mutable_grad()[0] = -1.0;
  adamw_step(params, state, 0.1, c);
  const double m = 0.9 * 0.1 - 0.1, v = 0.999 * 0.001 + 0.001;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(params[0].tensor.at(0), -0.1 / (1.0 + 1e-8) - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-14);
}

TEST(AdamW, ZeroGradientOnlyDecays) {
  TrainConfig c;
  c.weight_decay = 0.5;
  auto params = one_param({2.0, -3.0});
  OptimizerState<double> state;
  adamw_step(params, state, 0.1, c);  // no grad buffer at all
  EXPECT_DOUBLE_EQ(params[0].tensor.at(0), 2.0 * 0.95);
  EXPECT_DOUBLE_EQ(params[0].tensor.at(1), -3.0 * 0.95);
  c.weight_decay = 0.0;
  adamw_step(params, state, 0.1, c);
  EXPECT_DOUBLE_EQ(params[0].tensor.at(0), 2.0 * 0.95);
}

TEST(AdamW, NonFiniteGradientNamesParameter) {
  TrainConfig c;
  auto params = one_param({1.0});
  params[0].name = "stage2.block1.mixing.t_weights.w_+1";
  params[0].tensor.mutable_grad()[0] = std::nan("");
  OptimizerState<double> state;
  try {
    adamw_step(params, state, 0.1, c);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("stage2.block1.mixing.t_weights.w_+1"), std::string::npos);
  }
  EXPECT_DOUBLE_EQ(params[0].tensor.at(0), 1.0);
}

TEST(GradClip, RescalesToMaxNorm) {
  auto params = one_param({0.0, 0.0});
  auto g = params[0].tensor.mutable_grad();
  g[0] = 3.0;
  g[1] = 4.0;
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(params[0].tensor.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(params[0].tensor.grad()[1], 0.8, 1e-15);
}

TEST(Training, ToyColourTaskReachesFullAccuracy) {
  const auto spec = toy_spec();
  const Dataset train = colour_task(64, 1), val = colour_task(32, 2);
  std::mt19937_64 rng(3);
  auto params = init_params<float>(spec, rng);
  auto model = make_classifier(spec, params);
  TrainConfig c;
  c.base_lr = 2e-3;
  c.total_epochs = 5;
  c.batch_size = 8;
  c.warmup_epochs = 0.5;
  const auto r = train_model(model, train, val, c);
  ASSERT_FALSE(r.diverged) << r.message;
  ASSERT_EQ(r.trace.size(), 5u);
  EXPECT_DOUBLE_EQ(r.trace.back().val_acc, 100.0);
  EXPECT_LT(r.trace.back().train_loss, r.trace.front().train_loss);
  EXPECT_EQ(r.trace.back().lr, 0.0);
}

TEST(Training, SeededRunsAreBitwiseIdentical) {
  const auto spec = toy_spec();
  const Dataset train = colour_task(20, 4), val = colour_task(8, 5);
  TrainConfig c;
  c.total_epochs = 2;
  c.batch_size = 6;  // leaves a partial batch
  c.seed = 42;
  auto run = [&] {
    std::mt19937_64 rng(9);
    auto params = init_params<double>(spec, rng);
    auto model = make_classifier(spec, params);
    auto r = train_model(model, train, val, c);
    std::vector<double> flat;
    for (auto& p : params.named_parameters()) {
      const auto v = p.tensor.values();
      flat.insert(flat.end(), v.begin(), v.end());
    }
    return std::make_pair(r.trace, flat);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Training, ZeroLearningRateLeavesWeightsUntouched) {
  const auto spec = toy_spec();
  const Dataset train = colour_task(8, 6), val = colour_task(4, 7);
  std::mt19937_64 rng(1);
  auto params = init_params<float>(spec, rng);
  std::vector<std::vector<float>> before;
  for (auto& p : params.named_parameters()) before.push_back(p.tensor.values());
  auto model = make_classifier(spec, params);
  TrainConfig c;
  c.base_lr = 0.0;
  c.total_epochs = 2;
  c.batch_size = 4;
  train_model(model, train, val, c);
  std::size_t i = 0;
  for (auto& p : params.named_parameters()) EXPECT_EQ(p.tensor.values(), before[i++]) << p.name;
}

TEST(Training, SingleBatchLossFallsSteadily) {
  const auto spec = toy_spec();
  const Dataset data = colour_task(8, 8);
  std::mt19937_64 rng(2);
  auto params = init_params<double>(spec, rng);
  auto model = make_classifier(spec, params);
  std::vector<std::size_t> idx(8);
  std::iota(idx.begin(), idx.end(), 0);
  TrainConfig c;
  c.weight_decay = 0.0;
  OptimizerState<double> state;
  std::vector<double> losses;
  for (int step = 0; step < 40; ++step) {
    for (auto& p : model.params) p.tensor.zero_grad();
    const auto x = data.batch<double>(idx);
    auto loss = cross_entropy(model.forward(x, {}), data.labels);
    losses.push_back(loss.item());
    loss.backward();
    adamw_step(model.params, state, 1e-3, c);
  }
  auto window = [&](std::size_t end) {
    return std::accumulate(losses.begin() + static_cast<long>(end) - 10, losses.begin() + static_cast<long>(end), 0.0) / 10;
  };
  for (std::size_t end = 20; end <= losses.size(); end += 10) EXPECT_LT(window(end), window(end - 10));
  EXPECT_LT(losses.back(), 0.1 * losses.front());
}

TEST(Training, NonFiniteLossStopsWithDivergence) {
  const auto spec = toy_spec();
  Dataset train = colour_task(8, 1);
  train.clips[0] = std::nanf("");
  const Dataset val = colour_task(4, 2);
  std::mt19937_64 rng(2);
  auto params = init_params<float>(spec, rng);
  auto model = make_classifier(spec, params);
  TrainConfig c;
  c.batch_size = 8;
  c.total_epochs = 1;
  const auto r = train_model(model, train, val, c);
  EXPECT_TRUE(r.diverged);
  EXPECT_TRUE(r.trace.empty());
}

TEST(Training, TraceCsvRoundTripsExactly) {
  std::vector<EpochRecord> trace{{1, 1.0 / 3.0, 62.5, 4.9e-4}, {2, 0.1234567890123, 100.0, 0.0}};
  const auto path = std::filesystem::temp_directory_path() / "mlp3d_trace_test.csv";
  write_trace_csv(path, trace);
  EXPECT_EQ(read_trace_csv(path), trace);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace mlp3d
