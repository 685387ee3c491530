#include "mlp3d/verify.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <fmt/format.h>

#include "mlp3d/block.hpp"
#include "mlp3d/grad_check.hpp"
#include "mlp3d/gtm.hpp"
#include "mlp3d/network.hpp"
#include "mlp3d/ops.hpp"

namespace mlp3d {

namespace {

constexpr GtmKind kGroupedKinds[] = {GtmKind::short_range, GtmKind::long_range, GtmKind::shift_window,
                                     GtmKind::shift_token};

template <class Real>
Tensor<Real> uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Real>(u(rng));
  return Tensor<Real>::from(std::move(shape), std::move(v));
}

template <class Real>
void randomize(std::vector<NamedTensor<Real>> params, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& p : params)
    for (auto& v : p.tensor.mutable_data()) v = static_cast<Real>(u(rng));
}

// max |gtm_apply(x) - (x W + b)| with the reference accumulated in f64.
template <class Real>
double oracle_gap(const GtmConfig& cfg, std::size_t h, std::size_t w, std::size_t t, std::size_t c,
                  std::mt19937_64& rng, bool fault) {
  auto weights = make_gtm_weights<Real>(cfg, c, 0, &rng, 1.0);
  randomize(weights.named_parameters("g"), rng);
  const auto x = uniform<Real>({h, w, t, c}, rng);
  const auto dense = build_dense_time_matrix(cfg, t, weights);
  const auto bias = build_dense_time_bias(cfg, t, weights);
  if (fault) weights.named_parameters("g").front().tensor.mutable_data()[0] += Real(1e-3);
  const auto y = gtm_apply(cfg, weights, x);

  const std::size_t n = t * c, rows = h * w;
  const auto xd = x.data();
  const auto md = dense.data();
  double gap = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) {
      double s = static_cast<double>(bias[j]);
      for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(xd[r * n + i]) * static_cast<double>(md[i * n + j]);
      gap = std::max(gap, std::abs(static_cast<double>(y.at(r * n + j)) - s));
    }
  return gap;
}

std::vector<GtmConfig> grid(std::size_t t) {
  std::vector<GtmConfig> out;
  for (GtmKind kind : kGroupedKinds)
    for (std::size_t s : {1, 2, 4})
      for (bool shared : {true, false}) {
        if (s > t || (kind == GtmKind::shift_token && !shared)) continue;
        out.push_back({kind, s, shared});
      }
  return out;
}

template <class Real>
void oracle_precision(std::vector<CheckResult>& out, double tol, const char* tag, std::mt19937_64& rng,
                      bool fault) {
  std::map<std::string, CheckResult> by_kind;
  std::map<std::string, std::size_t> cases;
  for (std::size_t t : {4, 8})
    for (const auto& cfg : grid(t))
      for (std::size_t c : {1, 2, 4})
        for (std::size_t h : {1, 2})
          for (std::size_t w : {1, 2}) {
            const double gap = oracle_gap<Real>(cfg, h, w, t, c, rng, fault);
            auto& r = by_kind[std::string(to_string(cfg.kind))];
            if (gap >= r.max_error) {
              r.max_error = gap;
              r.detail = fmt::format("worst at S={} shared={} T={} C={} H={} W={}", cfg.group, cfg.shared, t, c, h, w);
            }
            ++cases[std::string(to_string(cfg.kind))];
          }
  for (GtmKind kind : kGroupedKinds) {
    auto r = by_kind[std::string(to_string(kind))];
    r.name = fmt::format("oracle.{}.{}", tag, to_string(kind));
    r.tolerance = tol;
    r.passed = r.max_error <= tol;
    r.detail = fmt::format("{} cases, {}", cases[std::string(to_string(kind))], r.detail);
    out.push_back(r);
  }
}

double max_entry_gap(const Tensor<double>& a, const Tensor<double>& b) {
  double g = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) g = std::max(g, std::abs(a.at(i) - b.at(i)));
  return g;
}

}  // namespace

std::vector<CheckResult> oracle_suite(const SuiteOptions& options) {
  std::mt19937_64 rng(options.seed + 2024);
  std::vector<CheckResult> out;
  oracle_precision<double>(out, 1e-12, "f64", rng, options.fault);
  oracle_precision<float>(out, 1e-5, "f32", rng, options.fault);
  return out;
}

std::vector<CheckResult> permutation_suite(const SuiteOptions& options) {
  std::mt19937_64 rng(options.seed + 77);
  CheckResult lr{"permutation.long_range", 0.0, 0.0, false, {}};
  CheckResult sw{"permutation.shift_window", 0.0, 0.0, false, {}};
  std::size_t cases = 0;
  for (std::size_t t : {4, 8})
    for (std::size_t s : {1, 2, 4})
      for (std::size_t c : {1, 2, 4})
        for (bool shared : {true, false}) {
          const GtmConfig sr{GtmKind::short_range, s, shared};
          auto w = make_gtm_weights<double>(sr, c, 0, &rng, 1.0);
          randomize(w.named_parameters("g"), rng);
          const auto base = build_dense_time_matrix(sr, t, w);
          const auto p = long_range_permutation<double>(t, s, c);
          const auto r = time_roll_permutation<double>(t, static_cast<long>(s / 2), c);
          auto dl = build_dense_time_matrix(GtmConfig{GtmKind::long_range, s, shared}, t, w);
          auto ds = build_dense_time_matrix(GtmConfig{GtmKind::shift_window, s, shared}, t, w);
          if (options.fault) {
            dl.mutable_data()[1] += 0.5;
            ds.mutable_data()[1] += 0.5;
          }
          lr.max_error = std::max(lr.max_error, max_entry_gap(matmul(matmul(p, base), transpose(p, 0, 1)), dl));
          sw.max_error = std::max(sw.max_error, max_entry_gap(matmul(matmul(r, base), transpose(r, 0, 1)), ds));
          ++cases;
        }
  for (auto* r : {&lr, &sw}) {
    r->passed = r->max_error == 0.0;
    r->detail = fmt::format("{} cases, entrywise", cases);
  }
  return {lr, sw};
}

std::vector<CheckResult> grad_suite(const SuiteOptions& options) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(options.seed + 5);
  GradCheckOptions gopt;
  gopt.step = 1e-5;
  gopt.tolerance = 1e-4;

  // The fault adds a term whose gradient the backward pass cannot see.
  auto wrap = [&](std::function<Tensor<double>()> loss, const Tensor<double>& victim) {
    if (!options.fault) return loss;
    return std::function<Tensor<double>()>([loss, victim] { return add(loss(), sum_all(victim.detach())); });
  };

  for (GtmKind kind : kGroupedKinds) {
    BlockShape shape;
    shape.mixing.channels = 4;
    shape.mixing.window_h = 2;
    shape.mixing.window_w = 2;
    shape.mixing.time = {kind, 2, kind != GtmKind::shift_window};
    shape.mlp_ratio = 2;
    auto p = make_block_params<double>(shape, &rng, 0.5);
    auto x = uniform<double>({2, 3, 3, 4, 4}, rng);
    x.set_requires_grad(true);
    const auto probe = uniform<double>(x.shape(), rng);
    auto params = p.named_parameters("block");
    params.push_back({"input", x});
    const auto report = grad_check(
        wrap([&] { return sum_all(mul(block_forward(x, p), probe)); }, params.front().tensor), params, gopt);
    out.push_back({fmt::format("grad.block.{}", to_string(kind)), report.max_rel_error(), gopt.tolerance,
                   report.passed, fmt::format("{} tensors", report.entries.size())});
  }

  NetworkSpec spec = make_variant("micro", 32, 32, 8, 4);
  spec.depths = {1, 1, 1, 1};
  spec.gtm_per_block = {{GtmKind::short_range, 2, true},
                        {GtmKind::long_range, 2, false},
                        {GtmKind::shift_window, 2, true},
                        {GtmKind::shift_token, 2, true}};
  auto params = init_params<double>(spec, rng, {.stddev = 0.3});
  const auto clip = uniform<double>({2, 32, 32, 8, 3}, rng, 0.0, 1.0);
  const std::vector<std::size_t> labels{1, 3};
  GradCheckOptions nopt = gopt;
  nopt.max_elements_per_param = 12;
  nopt.seed = options.seed;
  const auto named = params.named_parameters();
  const auto report = grad_check(
      wrap([&] { return cross_entropy(network_forward(clip, spec, params), labels); }, named.front().tensor),
      named, nopt);
  out.push_back({"grad.network.micro", report.max_rel_error(), nopt.tolerance, report.passed,
                 fmt::format("{} tensors, up to {} elements each", report.entries.size(), nopt.max_elements_per_param)});
  return out;
}

std::vector<CheckResult> init_suite(const SuiteOptions& options) {
  std::mt19937_64 rng(options.seed + 8);
  NetworkSpec spec = make_variant("micro", 32, 32, 16, 4);
  spec.gtm_per_block = {{GtmKind::short_range, 4, true},
                        {GtmKind::long_range, 2, false},
                        {GtmKind::shift_token, 4, true},
                        {GtmKind::shift_window, 2, true},
                        {GtmKind::short_range, 2, false}};
  Reference2d<double> ref;
  ref.embed_weight = uniform<double>({7 * 7 * 3, spec.channels[0]}, rng, -0.2, 0.2);
  ref.embed_bias = uniform<double>({spec.channels[0]}, rng, -0.1, 0.1);
  for (std::size_t b = 0; b < spec.block_count(); ++b) {
    const std::size_t c = spec.channels[spec.block_position(b).first];
    ref.channel_mix.push_back(uniform<double>({c, c}, rng, -0.3, 0.3));
  }
  auto params = center_init(spec, ref, rng, {.stddev = 0.3});
  if (options.fault) params.block(spec, 1).mixing.time.bias.mutable_data()[0] += 0.5;

  const auto frame = uniform<double>({1, 32, 32, 1, 3}, rng, 0.0, 1.0);
  const auto clip = concat<double>(std::vector<Tensor<double>>(16, frame), 3);
  CheckResult r{"init.time_constancy", 0.0, 1e-6, false, {}};
  std::size_t layers = 0;
  ActivationObserver<double> obs = [&](const std::string& name, const Tensor<double>& v) {
    if (name == "pooled" || name == "logits") return;
    r.max_error = std::max(r.max_error, time_constancy_deviation(v));
    ++layers;
  };
  network_forward(clip, spec, params, {}, &obs);
  r.passed = r.max_error <= r.tolerance;
  r.detail = fmt::format("{} layers", layers);
  return {r};
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

std::string format_result(const CheckResult& r) {
  return fmt::format("{} {} max_error={:.3e} tol={:.1e} ({})", r.passed ? "PASS" : "FAIL", r.name, r.max_error,
                     r.tolerance, r.detail);
}

}  // namespace mlp3d
