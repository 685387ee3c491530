#pragma once

#include <cmath>
#include <random>

#include "mlp3d/tensor.hpp"

namespace mlp3d {

// Trainable leaf drawn from N(0, stddev^2) truncated at two standard
// deviations. A null rng yields zeros.
template <class Real>
Tensor<Real> init_weight(Shape shape, std::mt19937_64* rng, double stddev) {
  std::vector<Real> v(shape_numel(shape), Real(0));
  if (rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    for (auto& x : v) {
      double z;
      do z = normal(*rng);
      while (std::abs(z) > 2.0 * stddev);
      x = static_cast<Real>(z);
    }
  }
  return Tensor<Real>::from(std::move(shape), std::move(v)).set_requires_grad(true);
}

template <class Real>
Tensor<Real> init_constant(Shape shape, Real value) {
  return Tensor<Real>::full(std::move(shape), value).set_requires_grad(true);
}

}  // namespace mlp3d
