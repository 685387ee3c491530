#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mlp3d/tensor.hpp"

namespace mlp3d {

// Labelled clips stored contiguously as f32 [N, H, W, T, 3].
struct Dataset {
  std::size_t height = 0, width = 0, time = 0;
  std::size_t num_classes = 0;
  std::vector<float> clips;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t clip_numel() const { return height * width * time * 3; }
  std::span<const float> clip(std::size_t i) const;
  std::span<float> mutable_clip(std::size_t i);

  // [indices.size(), H, W, T, 3]
  template <class Real>
  Tensor<Real> batch(std::span<const std::size_t> indices) const;

  // Clips [first, first + count).
  Dataset slice(std::size_t first, std::size_t count) const;
  // Throws ConfigError on inconsistent sizes or out-of-range labels.
  void validate() const;
};

}  // namespace mlp3d
