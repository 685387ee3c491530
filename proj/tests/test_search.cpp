#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "json.hpp"
#include "mlp3d/errors.hpp"
#include "mlp3d/search.hpp"
#include "mlp3d/synthdata.hpp"

namespace mlp3d {
namespace {

std::vector<std::vector<GtmConfig>> grid(std::size_t blocks, std::size_t time = 4) {
  return std::vector<std::vector<GtmConfig>>(blocks, block_candidates(SearchSpace{}, time));
}

TEST(SearchSpace, CandidatesAtFourSteps) {
  const auto c = block_candidates(SearchSpace{}, 4);
  ASSERT_EQ(c.size(), 12u);
  EXPECT_EQ(c[0], (GtmConfig{GtmKind::short_range, 1, true}));
  EXPECT_EQ(c[2], (GtmConfig{GtmKind::short_range, 4, true}));
  EXPECT_EQ(c[3], (GtmConfig{GtmKind::long_range, 1, true}));
  EXPECT_EQ(c[11], (GtmConfig{GtmKind::shift_token, 4, true}));
  EXPECT_EQ(pool_size(SearchSpace{}, 4), 4u);
  EXPECT_EQ(block_candidates(SearchSpace{}, 16).size(), 20u);
  // shift_token needs no divisibility, the partition kinds do
  SearchSpace s;
  s.sizes = {3};
  const auto odd = block_candidates(s, 4);
  ASSERT_EQ(odd.size(), 1u);
  EXPECT_EQ(odd[0].kind, GtmKind::shift_token);
}

TEST(SearchSpace, Validation) {
  SearchSpace s;
  s.kinds.push_back(GtmKind::full);
  EXPECT_THROW(validate_space(s), ConfigError);
  s = {};
  s.sizes = {0};
  EXPECT_THROW(validate_space(s), ConfigError);
  s = {};
  s.sizes = {8};
  EXPECT_THROW(block_candidates(s, 4), ConfigError);
}

TEST(Sampling, SingleCandidateConsumesNoRandomness) {
  const std::vector<std::vector<GtmConfig>> one(3, {GtmConfig{GtmKind::long_range, 2, true}});
  std::mt19937_64 rng(5), ref(5);
  const auto a = sample_assignment(one, Assignment(3), rng);
  EXPECT_EQ(a, std::vector<GtmConfig>(3, one[0][0]));
  EXPECT_EQ(rng(), ref());
}

TEST(Sampling, UniformWithinThreeSigma) {
  const auto cands = grid(2);
  std::mt19937_64 rng(17);
  const std::size_t draws = 12000;
  std::map<std::pair<int, std::size_t>, std::size_t> freq;
  for (std::size_t i = 0; i < draws; ++i) {
    const auto a = sample_assignment(cands, Assignment(2), rng);
    ++freq[{kind_order(a[1].kind), a[1].group}];
  }
  ASSERT_EQ(freq.size(), 12u);
  const double p = 1.0 / 12.0, mean = draws * p, sigma = std::sqrt(draws * p * (1 - p));
  for (const auto& [k, n] : freq) EXPECT_LE(std::abs(static_cast<double>(n) - mean), 3 * sigma);
}

TEST(Sampling, DecidedBlocksNeverResampled) {
  const auto cands = grid(4);
  Assignment partial(4);
  partial[1] = GtmConfig{GtmKind::shift_window, 2, true};
  partial[3] = GtmConfig{GtmKind::short_range, 1, true};
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto a = sample_assignment(cands, partial, rng);
    EXPECT_EQ(a[1], *partial[1]);
    EXPECT_EQ(a[3], *partial[3]);
  }
  EXPECT_THROW(sample_assignment(cands, Assignment(3), rng), ConfigError);
}

double stub_gmacs(const std::vector<GtmConfig>& arch) {
  double c = 0;
  for (const auto& g : arch) c += static_cast<double>(g.group) * (g.kind == GtmKind::shift_token ? 1.5 : 1.0);
  return c;
}

TEST(GreedySearch, DominantCandidateWinsAtZeroAlpha) {
  const auto cands = grid(5);
  const std::vector<GtmConfig> target{{GtmKind::long_range, 4, true},   {GtmKind::shift_token, 1, true},
                                      {GtmKind::short_range, 2, true},  {GtmKind::shift_window, 4, true},
                                      {GtmKind::shift_token, 4, true}};
  Estimator est = [&](const std::vector<GtmConfig>& a) {
    Estimate e;
    for (std::size_t b = 0; b < a.size(); ++b) e.accuracy += a[b] == target[b] ? 10.0 : 0.0;
    e.gmacs = stub_gmacs(a);
    return e;
  };
  SearchSpace s;
  s.alpha = 0.0;
  const auto r = greedy_search(cands, est, s, 1);
  EXPECT_EQ(r.architecture, target);
  for (const auto& a : r.repeat_architectures) EXPECT_EQ(a, target);
  EXPECT_EQ(r.trace.size(), s.repeats * 5 * 12);
}

TEST(GreedySearch, HugeAlphaPicksMinimumCost) {
  const auto cands = grid(4);
  Estimator est = [](const std::vector<GtmConfig>& a) { return Estimate{50.0, stub_gmacs(a)}; };
  SearchSpace s;
  s.alpha = 1e3;
  const auto r = greedy_search(cands, est, s, 2);
  // S = 1 everywhere; all four kinds cost 1 or 1.5 at S=1 and ties go to kind order
  for (const auto& g : r.architecture) EXPECT_EQ(g, (GtmConfig{GtmKind::short_range, 1, true}));
}

TEST(GreedySearch, TiesResolveByCostThenSizeThenKind) {
  const std::vector<std::vector<GtmConfig>> cands{
      {{GtmKind::shift_token, 2, true}, {GtmKind::long_range, 2, true}, {GtmKind::long_range, 1, true}}};
  // equal score and cost for all three
  Estimator flat = [](const std::vector<GtmConfig>&) { return Estimate{10.0, 1.0}; };
  SearchSpace s;
  s.repeats = 1;
  EXPECT_EQ(greedy_search(cands, flat, s, 0).architecture[0], (GtmConfig{GtmKind::long_range, 1, true}));
  Estimator by_size = [](const std::vector<GtmConfig>& a) { return Estimate{10.0, a[0].group == 1 ? 2.0 : 1.0}; };
  EXPECT_EQ(greedy_search(cands, by_size, s, 0).architecture[0], (GtmConfig{GtmKind::long_range, 2, true}));
}

TEST(GreedySearch, ShiftingAccuracyChangesNothing) {
  const auto cands = grid(3);
  auto base = [](const std::vector<GtmConfig>& a) {
    double v = 0;
    for (std::size_t b = 0; b < a.size(); ++b) v += std::sin(static_cast<double>(kind_order(a[b].kind) * 7 + a[b].group * (b + 1)));
    return Estimate{v, stub_gmacs(a)};
  };
  Estimator shifted = [&](const std::vector<GtmConfig>& a) {
    auto e = base(a);
    e.accuracy += 1000.0;
    return e;
  };
  const auto r1 = greedy_search(cands, base, SearchSpace{}, 4);
  const auto r2 = greedy_search(cands, shifted, SearchSpace{}, 4);
  EXPECT_EQ(r1.architecture, r2.architecture);
  EXPECT_EQ(r1.best_repeat, r2.best_repeat);
}

TEST(GreedySearch, TraceMarksOneDecisionPerBlockAndWritesJsonl) {
  const auto cands = grid(3);
  Estimator est = [](const std::vector<GtmConfig>& a) { return Estimate{static_cast<double>(a[0].group), stub_gmacs(a)}; };
  const SearchSpace s;
  const auto r = greedy_search(cands, est, s, 9);
  ASSERT_EQ(r.trace.size(), 3u * 36u);
  std::size_t decided = 0;
  for (const auto& t : r.trace) decided += t.decided;
  EXPECT_EQ(decided, 9u);
  const auto path = std::filesystem::temp_directory_path() / "mlp3d_search_trace.jsonl";
  write_search_trace(path, r.trace);
  std::ifstream in(path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"repeat", "block", "kind", "S", "V", "C", "score", "decided"}) EXPECT_TRUE(j.contains(key));
    ++lines;
  }
  EXPECT_EQ(lines, r.trace.size());
  std::filesystem::remove(path);
}

TEST(GreedySearch, SameSeedSameResult) {
  const auto cands = grid(3);
  std::size_t calls = 0;
  Estimator noisy = [&](const std::vector<GtmConfig>& a) {
    ++calls;
    double v = 0;
    for (const auto& g : a) v += static_cast<double>(g.group * (kind_order(g.kind) + 1) % 5);
    return Estimate{v, stub_gmacs(a)};
  };
  const auto a = greedy_search(cands, noisy, SearchSpace{}, 11);
  const auto b = greedy_search(cands, noisy, SearchSpace{}, 11);
  EXPECT_EQ(a.architecture, b.architecture);
  EXPECT_EQ(a.repeat_scores, b.repeat_scores);
  EXPECT_EQ(calls, 2u * 3u * 36u * 4u);
}

SynthConfig tiny_synth() {
  SynthConfig c;
  c.train_size = 16;
  c.val_size = 8;
  c.seed = 3;
  return c;
}

TEST(Supernet, EstimatorCostIsClosedForm) {
  const auto spec = make_variant("micro", 32, 32, 16, 4);
  std::mt19937_64 rng(1);
  auto net = make_supernet<float>(spec, SearchSpace{}, rng);
  const auto data = generate(tiny_synth());
  const auto est = make_estimator(net, data.val, 8);
  std::mt19937_64 pick(2);
  for (int i = 0; i < 3; ++i) {
    const auto arch = sample_assignment(net.candidates, Assignment(net.candidates.size()), pick);
    const auto e = est(arch);
    auto fixed = spec;
    fixed.gtm_per_block = arch;
    EXPECT_DOUBLE_EQ(e.gmacs, static_cast<double>(count_flops(fixed)) * 1e-9);
    EXPECT_GE(e.accuracy, 0.0);
    EXPECT_LE(e.accuracy, 100.0);
  }
}

TEST(Supernet, EveryAssignmentRunsOnSharedWeights) {
  const auto spec = make_variant("micro", 32, 32, 16, 4);
  std::mt19937_64 rng(1);
  auto net = make_supernet<double>(spec, SearchSpace{}, rng);
  EXPECT_EQ(net.params.pool_group, 4u);
  const auto data = generate(tiny_synth());
  const std::vector<std::size_t> idx{0, 1};
  const auto x = data.val.batch<double>(idx);
  for (const auto& c : net.candidates[0]) {
    auto s = net.spec;
    set_all_gtm(s, c);
    const auto logits = network_forward(x, s, net.params);
    for (double v : logits.data()) EXPECT_TRUE(std::isfinite(v)) << to_string(c.kind) << c.group;
  }
}

TEST(Supernet, SingleCandidateMatchesFixedTraining) {
  auto spec = make_variant("micro", 32, 32, 16, 4);
  SearchSpace only;
  only.kinds = {GtmKind::long_range};
  only.sizes = {2};
  std::mt19937_64 r1(5), r2(5);
  auto net = make_supernet<double>(spec, only, r1);
  set_all_gtm(spec, {GtmKind::long_range, 2, true});
  auto fixed = init_params<double>(spec, r2, {.pool_group = 2});
  const auto data = generate(tiny_synth());
  TrainConfig c;
  c.total_epochs = 1;
  c.batch_size = 8;
  const auto a = pretrain_supernet(net, data.train, data.val, c);
  auto model = make_classifier(spec, fixed);
  const auto b = train_model(model, data.train, data.val, c);
  EXPECT_EQ(a.trace, b.trace);
  const auto pa = net.params.named_parameters(), pb = fixed.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].tensor.values(), pb[i].tensor.values()) << pa[i].name;
}

}  // namespace
}  // namespace mlp3d
