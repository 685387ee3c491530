#include "mlp3d/dataset.hpp"

#include <string>

#include "mlp3d/errors.hpp"

namespace mlp3d {

std::span<const float> Dataset::clip(std::size_t i) const {
  if (i >= size()) throw DimensionError("clip index " + std::to_string(i) + " out of range");
  return std::span<const float>(clips).subspan(i * clip_numel(), clip_numel());
}

std::span<float> Dataset::mutable_clip(std::size_t i) {
  if (i >= size()) throw DimensionError("clip index " + std::to_string(i) + " out of range");
  return std::span<float>(clips).subspan(i * clip_numel(), clip_numel());
}

template <class Real>
Tensor<Real> Dataset::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw DimensionError("empty batch");
  const std::size_t n = clip_numel();
  std::vector<Real> out(indices.size() * n);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto src = clip(indices[b]);
    for (std::size_t i = 0; i < n; ++i) out[b * n + i] = static_cast<Real>(src[i]);
  }
  return Tensor<Real>::from({indices.size(), height, width, time, 3}, std::move(out));
}

Dataset Dataset::slice(std::size_t first, std::size_t count) const {
  if (first + count > size()) throw DimensionError("dataset slice out of range");
  Dataset d = *this;
  d.labels.assign(labels.begin() + static_cast<long>(first),
                  labels.begin() + static_cast<long>(first + count));
  d.clips.assign(clips.begin() + static_cast<long>(first * clip_numel()),
                 clips.begin() + static_cast<long>((first + count) * clip_numel()));
  return d;
}

void Dataset::validate() const {
  if (height == 0 || width == 0 || time == 0) throw ConfigError("dataset geometry must be positive");
  if (clips.size() != size() * clip_numel())
    throw ConfigError("dataset holds " + std::to_string(clips.size()) + " values for " +
                      std::to_string(size()) + " clips");
  for (auto l : labels)
    if (l >= num_classes) throw ConfigError("label " + std::to_string(l) + " out of range");
}

template Tensor<float> Dataset::batch<float>(std::span<const std::size_t>) const;
template Tensor<double> Dataset::batch<double>(std::span<const std::size_t>) const;

}  // namespace mlp3d
