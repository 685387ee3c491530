#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mlp3d/tensor.hpp"

namespace mlp3d {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double denominator_floor = 1e-3;
  // 0 checks every element; otherwise a seeded random subset per parameter.
  std::size_t max_elements_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  bool passed = false;

  double max_rel_error() const;
};

// Compares backward-pass gradients of a scalar loss against central
// differences (f(p+h) - f(p-h)) / 2h. The loss callback is re-run for every
// perturbed element and must be deterministic.
GradCheckReport grad_check(const std::function<Tensor<double>()>& loss,
                           std::vector<NamedTensor<double>> params,
                           const GradCheckOptions& options = {});

}  // namespace mlp3d
