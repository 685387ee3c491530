#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "mlp3d/tensor.hpp"

namespace mlp3d::testing {

template <class Real>
Tensor<Real> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                           bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Real>(u(rng));
  auto t = Tensor<Real>::from(std::move(shape), std::move(v));
  t.set_requires_grad(requires_grad);
  return t;
}

template <class Real>
double max_abs_diff(std::span<const Real> a, std::span<const Real> b) {
  double worst = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return worst;
}

// Naive dense product over the last axis: x[..., K] * m[K, N].
inline std::vector<double> dense_apply(std::span<const double> x, std::size_t k,
                                       std::span<const double> m, std::size_t n) {
  const std::size_t rows = x.size() / k;
  std::vector<double> y(rows * n, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += x[r * k + i] * m[i * n + j];
      y[r * n + j] = s;
    }
  return y;
}

}  // namespace mlp3d::testing
