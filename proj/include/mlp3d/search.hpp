#pragma once

// Weight-sharing greedy search over per-block time-mixing choices.
//
// Step 1 trains one supernet whose time branches all hold the shared offset
// pool, drawing a random assignment every iteration. Step 2 fixes blocks one
// at a time: each candidate is scored as V - alpha * C (V = top-1 percent on
// the validation split, C = GMACs per clip) with decided blocks held and the
// remaining blocks drawn at random. The pass runs `repeats` times and the
// best final score wins.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mlp3d/dataset.hpp"
#include "mlp3d/gtm.hpp"
#include "mlp3d/network.hpp"
#include "mlp3d/train.hpp"

namespace mlp3d {

struct SearchSpace {
  std::vector<GtmKind> kinds{GtmKind::short_range, GtmKind::long_range, GtmKind::shift_window,
                             GtmKind::shift_token};
  std::vector<std::size_t> sizes{1, 2, 4, 8, 16};
  double alpha = 5e-3;
  std::size_t eval_draws = 4;
  std::size_t repeats = 3;

  bool operator==(const SearchSpace&) const = default;
};

void validate_space(const SearchSpace& space);

// Candidates runnable on `time_tokens` steps, ordered by kind then size.
// Sizes above time_tokens are dropped; partition kinds also need S | T.
std::vector<GtmConfig> block_candidates(const SearchSpace& space, std::size_t time_tokens);
// Largest candidate size: the radius of the shared offset pool.
std::size_t pool_size(const SearchSpace& space, std::size_t time_tokens);

using Assignment = std::vector<std::optional<GtmConfig>>;

// Uniform independent draw for every undecided block; decided blocks are
// copied. Blocks with a single candidate consume no randomness.
std::vector<GtmConfig> sample_assignment(const std::vector<std::vector<GtmConfig>>& candidates,
                                         const Assignment& partial, std::mt19937_64& rng);

template <class Real>
struct Supernet {
  NetworkSpec spec;  // gtm_per_block holds the currently active draw
  ModelParams<Real> params;
  std::vector<std::vector<GtmConfig>> candidates;
};

template <class Real>
Supernet<Real> make_supernet(const NetworkSpec& spec, const SearchSpace& space, std::mt19937_64& rng,
                             double stddev = 0.02);

template <class Real>
TrainResult pretrain_supernet(Supernet<Real>& net, const Dataset& train, const Dataset& val,
                              const TrainConfig& cfg,
                              const std::function<void(const EpochRecord&)>& on_epoch = {});

struct Estimate {
  double accuracy = 0.0;  // V, percent
  double gmacs = 0.0;     // C
};

// Scores one fully resolved architecture.
using Estimator = std::function<Estimate(const std::vector<GtmConfig>& architecture)>;

template <class Real>
Estimator make_estimator(Supernet<Real>& net, const Dataset& val, std::size_t batch_size = 32);

double search_score(const Estimate& e, double alpha);

struct TraceEntry {
  std::size_t repeat = 0, block = 0;
  GtmConfig candidate;
  double accuracy = 0.0, gmacs = 0.0, score = 0.0;
  bool decided = false;  // this candidate was fixed for the block
};

struct SearchResult {
  std::vector<GtmConfig> architecture;
  std::size_t best_repeat = 0;
  std::vector<std::vector<GtmConfig>> repeat_architectures;
  std::vector<double> repeat_scores;
  std::vector<TraceEntry> trace;
};

// Ties on score go to lower C, then lower S, then kind order.
SearchResult greedy_search(const std::vector<std::vector<GtmConfig>>& candidates,
                           const Estimator& estimate, const SearchSpace& space, std::uint64_t seed);

void write_search_trace(const std::filesystem::path& path, const std::vector<TraceEntry>& trace);

}  // namespace mlp3d
