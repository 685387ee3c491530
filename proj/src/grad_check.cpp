#include "mlp3d/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mlp3d/errors.hpp"

namespace mlp3d {

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

namespace {

double eval_finite(const std::function<Tensor<double>()>& loss) {
  NoGradGuard no_grad;
  const double v = loss().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: loss evaluated to a non-finite value");
  return v;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor<double>()>& loss,
                           std::vector<NamedTensor<double>> params,
                           const GradCheckOptions& options) {
  for (auto& p : params) {
    p.tensor.zero_grad();
    p.tensor.set_requires_grad(true);
  }
  {
    Tensor<double> l = loss();
    if (!std::isfinite(l.item()))
      throw NumericError("grad_check: loss evaluated to a non-finite value");
    l.backward();
  }

  GradCheckReport report;
  report.tolerance = options.tolerance;
  std::mt19937_64 rng(options.seed);
  for (auto& p : params) {
    GradCheckEntry entry;
    entry.name = p.name;
    const std::size_t n = p.tensor.numel();
    std::vector<double> analytic(n, 0.0);
    if (p.tensor.has_grad()) std::copy(p.tensor.grad().begin(), p.tensor.grad().end(), analytic.begin());

    std::vector<std::size_t> indices(n);
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (options.max_elements_per_param > 0 && n > options.max_elements_per_param) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_elements_per_param);
      std::sort(indices.begin(), indices.end());
    }

    auto values = p.tensor.mutable_data();
    for (std::size_t i : indices) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = eval_finite(loss);
      values[i] = saved - options.step;
      const double down = eval_finite(loss);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric),
                                     options.denominator_floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++entry.checked;
      if (rel > entry.max_rel_error || entry.checked == 1) {
        entry.max_rel_error = std::max(entry.max_rel_error, rel);
        if (rel >= entry.max_rel_error) {
          entry.worst_index = i;
          entry.worst_analytic = analytic[i];
          entry.worst_numeric = numeric;
        }
      }
    }
    report.entries.push_back(std::move(entry));
  }
  report.passed = std::all_of(report.entries.begin(), report.entries.end(),
                              [&](const GradCheckEntry& e) {
                                return e.max_rel_error <= options.tolerance;
                              });
  for (auto& p : params) p.tensor.zero_grad();
  return report;
}

}  // namespace mlp3d
