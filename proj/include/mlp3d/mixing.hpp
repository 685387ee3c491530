#pragma once

// Decomposed token mixing: height, width and time branches, a per-channel
// softmax weighting of the three, then a C x C projection.
//
// Spatial branches use circulant (shift-token style) mixing along H or W:
//   y = sum_{i < window} roll(x, axis, i) w_i + bias

#include <random>
#include <string>
#include <vector>

#include "mlp3d/gtm.hpp"
#include "mlp3d/tensor.hpp"

namespace mlp3d {

enum class SpatialAxis { height, width };

template <class Real>
struct AxisMixWeights {
  std::vector<Tensor<Real>> taps;  // window entries, each C x C
  Tensor<Real> bias;               // [C]

  std::size_t window() const { return taps.size(); }
  std::vector<NamedTensor<Real>> named_parameters(const std::string& prefix) const;
  std::size_t scalar_count() const;
};

template <class Real>
AxisMixWeights<Real> make_axis_mix_weights(std::size_t channels, std::size_t window,
                                           std::mt19937_64* rng, double stddev = 0.02);

// x is [..., H, W, T, C].
template <class Real>
Tensor<Real> axis_mix(const Tensor<Real>& x, SpatialAxis axis, const AxisMixWeights<Real>& w);

template <class Real>
struct MixingParams {
  AxisMixWeights<Real> height;
  AxisMixWeights<Real> width;
  GtmConfig time_config;
  GtmWeights<Real> time;
  Tensor<Real> fuse_logits;  // [3, C]; rows are (H, W, T)
  Tensor<Real> proj_weight;  // [C, C]
  Tensor<Real> proj_bias;    // [C]

  std::size_t channels() const { return proj_bias.numel(); }
  std::vector<NamedTensor<Real>> named_parameters(const std::string& prefix) const;
  std::size_t scalar_count() const;
};

struct MixingShape {
  std::size_t channels = 0;
  std::size_t window_h = 1;
  std::size_t window_w = 1;
  GtmConfig time;
  // > 0 allocates a shared offset pool of this size for the time branch.
  std::size_t pool_group = 0;
};

template <class Real>
MixingParams<Real> make_mixing_params(const MixingShape& shape, std::mt19937_64* rng,
                                      double stddev = 0.02);

// Softmax of the fusion logits over the branch axis, [3, C].
template <class Real>
Tensor<Real> branch_weights(const MixingParams<Real>& params);

template <class Real>
Tensor<Real> token_mixing_forward(const Tensor<Real>& x, const MixingParams<Real>& params,
                                  const GtmConfig& time_config);

template <class Real>
Tensor<Real> token_mixing_forward(const Tensor<Real>& x, const MixingParams<Real>& params) {
  return token_mixing_forward(x, params, params.time_config);
}

}  // namespace mlp3d
