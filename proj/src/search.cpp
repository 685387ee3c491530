#include "mlp3d/search.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

#include "mlp3d/errors.hpp"

namespace mlp3d {

void validate_space(const SearchSpace& space) {
  if (space.kinds.empty() || space.sizes.empty()) throw ConfigError("search space is empty");
  for (auto k : space.kinds)
    if (k == GtmKind::full) throw ConfigError("'full' is an oracle baseline, not a search candidate");
  for (auto s : space.sizes)
    if (s == 0) throw ConfigError("search sizes must be positive");
  if (space.alpha < 0.0) throw ConfigError("alpha must be non-negative");
  if (space.eval_draws == 0 || space.repeats == 0) throw ConfigError("eval_draws and repeats must be positive");
}

std::vector<GtmConfig> block_candidates(const SearchSpace& space, std::size_t time_tokens) {
  validate_space(space);
  std::vector<GtmKind> kinds = space.kinds;
  std::sort(kinds.begin(), kinds.end(), [](GtmKind a, GtmKind b) { return kind_order(a) < kind_order(b); });
  kinds.erase(std::unique(kinds.begin(), kinds.end()), kinds.end());
  std::vector<std::size_t> sizes = space.sizes;
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  std::vector<GtmConfig> out;
  for (auto k : kinds)
    for (auto s : sizes) {
      if (s > time_tokens) continue;
      if (k != GtmKind::shift_token && time_tokens % s != 0) continue;
      out.push_back({k, s, true});
    }
  if (out.empty())
    throw ConfigError("no search candidate fits " + std::to_string(time_tokens) + " time steps");
  return out;
}

std::size_t pool_size(const SearchSpace& space, std::size_t time_tokens) {
  std::size_t s = 0;
  for (const auto& c : block_candidates(space, time_tokens)) s = std::max(s, c.group);
  return s;
}

std::vector<GtmConfig> sample_assignment(const std::vector<std::vector<GtmConfig>>& candidates,
                                         const Assignment& partial, std::mt19937_64& rng) {
  if (partial.size() != candidates.size())
    throw ConfigError("assignment covers " + std::to_string(partial.size()) + " of " +
                      std::to_string(candidates.size()) + " blocks");
  std::vector<GtmConfig> out(candidates.size());
  for (std::size_t b = 0; b < candidates.size(); ++b) {
    if (partial[b]) {
      out[b] = *partial[b];
      continue;
    }
    const auto& c = candidates[b];
    if (c.empty()) throw ConfigError("block " + std::to_string(b) + " has no candidates");
    out[b] = c.size() == 1 ? c[0] : c[std::uniform_int_distribution<std::size_t>(0, c.size() - 1)(rng)];
  }
  return out;
}

template <class Real>
Supernet<Real> make_supernet(const NetworkSpec& spec, const SearchSpace& space, std::mt19937_64& rng,
                             double stddev) {
  Supernet<Real> net;
  net.spec = spec;
  const std::size_t t = spec.stage_geometry(0).time;
  const auto cands = block_candidates(space, t);
  net.candidates.assign(spec.block_count(), cands);
  net.spec.gtm_per_block.assign(spec.block_count(), cands.front());
  net.params = init_params<Real>(net.spec, rng, {.stddev = stddev, .pool_group = pool_size(space, t)});
  return net;
}

template <class Real>
TrainResult pretrain_supernet(Supernet<Real>& net, const Dataset& train, const Dataset& val,
                              const TrainConfig& cfg,
                              const std::function<void(const EpochRecord&)>& on_epoch) {
  Classifier<Real> model = make_classifier(net.spec, net.params);
  const Assignment open(net.candidates.size());
  TrainHooks<Real> hooks;
  hooks.before_step = [&](std::mt19937_64& rng) {
    net.spec.gtm_per_block = sample_assignment(net.candidates, open, rng);
  };
  hooks.before_eval = hooks.before_step;
  hooks.on_epoch = on_epoch;
  return train_model(model, train, val, cfg, hooks);
}

template <class Real>
Estimator make_estimator(Supernet<Real>& net, const Dataset& val, std::size_t batch_size) {
  return [&net, &val, batch_size](const std::vector<GtmConfig>& arch) {
    net.spec.gtm_per_block = arch;
    const Classifier<Real> model = make_classifier(net.spec, net.params);
    Estimate e;
    e.accuracy = evaluate_accuracy(model, val, batch_size);
    e.gmacs = static_cast<double>(count_flops(net.spec)) * 1e-9;
    return e;
  };
}

double search_score(const Estimate& e, double alpha) { return e.accuracy - alpha * e.gmacs; }

namespace {

// True when (score, C, S, kind) of a beats b.
bool better(double sa, const Estimate& ea, const GtmConfig& ca, double sb, const Estimate& eb,
            const GtmConfig& cb) {
  if (sa != sb) return sa > sb;
  if (ea.gmacs != eb.gmacs) return ea.gmacs < eb.gmacs;
  if (ca.group != cb.group) return ca.group < cb.group;
  return kind_order(ca.kind) < kind_order(cb.kind);
}

}  // namespace

SearchResult greedy_search(const std::vector<std::vector<GtmConfig>>& candidates,
                           const Estimator& estimate, const SearchSpace& space, std::uint64_t seed) {
  validate_space(space);
  SearchResult result;
  const std::size_t blocks = candidates.size();
  for (std::size_t r = 0; r < space.repeats; ++r) {
    Assignment decided(blocks);
    double final_score = 0.0;
    for (std::size_t b = 0; b < blocks; ++b) {
      std::size_t best = 0;
      double best_score = 0.0;
      Estimate best_est;
      const std::size_t first_entry = result.trace.size();
      for (std::size_t k = 0; k < candidates[b].size(); ++k) {
        Assignment partial = decided;
        partial[b] = candidates[b][k];
        Estimate mean;
        // Same draw seeds for every candidate of this block, so differences
        // come from the candidate and not from the random completion.
        for (std::size_t d = 0; d < space.eval_draws; ++d) {
          std::uint64_t state = seed ^ (0x9E3779B97F4A7C15ULL * (r + 1));
          state += 0xBF58476D1CE4E5B9ULL * (b * space.eval_draws + d + 1);
          std::mt19937_64 rng(state);
          const Estimate e = estimate(sample_assignment(candidates, partial, rng));
          mean.accuracy += e.accuracy;
          mean.gmacs += e.gmacs;
        }
        mean.accuracy /= static_cast<double>(space.eval_draws);
        mean.gmacs /= static_cast<double>(space.eval_draws);
        const double score = search_score(mean, space.alpha);
        result.trace.push_back({r, b, candidates[b][k], mean.accuracy, mean.gmacs, score, false});
        if (k == 0 || better(score, mean, candidates[b][k], best_score, best_est, candidates[b][best])) {
          best = k;
          best_score = score;
          best_est = mean;
        }
      }
      result.trace[first_entry + best].decided = true;
      decided[b] = candidates[b][best];
      final_score = best_score;
    }
    std::vector<GtmConfig> arch;
    for (auto& d : decided) arch.push_back(*d);
    result.repeat_architectures.push_back(arch);
    result.repeat_scores.push_back(final_score);
    if (r == 0 || final_score > result.repeat_scores[result.best_repeat]) result.best_repeat = r;
  }
  result.architecture = result.repeat_architectures[result.best_repeat];
  return result;
}

void write_search_trace(const std::filesystem::path& path, const std::vector<TraceEntry>& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& t : trace) {
    nlohmann::json j = {{"repeat", t.repeat},     {"block", t.block},
                        {"kind", to_string(t.candidate.kind)}, {"S", t.candidate.group},
                        {"V", t.accuracy},        {"C", t.gmacs},
                        {"score", t.score},       {"decided", t.decided}};
    out << j.dump() << '\n';
  }
}

#define MLP3D_INSTANTIATE_SEARCH(R)                                                                \
  template Supernet<R> make_supernet<R>(const NetworkSpec&, const SearchSpace&, std::mt19937_64&,  \
                                        double);                                                   \
  template TrainResult pretrain_supernet(Supernet<R>&, const Dataset&, const Dataset&,             \
                                         const TrainConfig&,                                       \
                                         const std::function<void(const EpochRecord&)>&);          \
  template Estimator make_estimator(Supernet<R>&, const Dataset&, std::size_t);

MLP3D_INSTANTIATE_SEARCH(float)
MLP3D_INSTANTIATE_SEARCH(double)

}  // namespace mlp3d
