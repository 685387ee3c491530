#pragma once

// Pre-norm MLP block:
//   Y = TokenMixing(LN(X)) + X
//   Z = ChannelMLP(LN(Y)) + Y

#include <random>
#include <string>
#include <vector>

#include "mlp3d/mixing.hpp"
#include "mlp3d/tensor.hpp"

namespace mlp3d {

template <class Real>
struct BlockParams {
  Tensor<Real> ln1_gamma, ln1_beta;
  MixingParams<Real> mixing;
  Tensor<Real> ln2_gamma, ln2_beta;
  Tensor<Real> fc1_weight;  // [C, rC]
  Tensor<Real> fc1_bias;    // [rC]
  Tensor<Real> fc2_weight;  // [rC, C]
  Tensor<Real> fc2_bias;    // [C]
  double drop_path_rate = 0.0;

  std::size_t channels() const { return fc2_bias.numel(); }
  std::vector<NamedTensor<Real>> named_parameters(const std::string& prefix) const;
  std::size_t scalar_count() const;
};

struct BlockShape {
  MixingShape mixing;
  std::size_t mlp_ratio = 4;
  double drop_path_rate = 0.0;
};

template <class Real>
BlockParams<Real> make_block_params(const BlockShape& shape, std::mt19937_64* rng,
                                    double stddev = 0.02);

// fc2(gelu(fc1(x))) per token.
template <class Real>
Tensor<Real> channel_mlp_forward(const Tensor<Real>& x, const BlockParams<Real>& params);

// x is [B, H, W, T, C] or [H, W, T, C]. In training mode with a positive
// drop-path rate each residual branch is zeroed per sample with that
// probability and rescaled by 1/(1-rate) otherwise; rng must then be set.
template <class Real>
Tensor<Real> block_forward(const Tensor<Real>& x, const BlockParams<Real>& params,
                           const GtmConfig& time_config, bool training,
                           std::mt19937_64* rng = nullptr);

template <class Real>
Tensor<Real> block_forward(const Tensor<Real>& x, const BlockParams<Real>& params) {
  return block_forward(x, params, params.mixing.time_config, false, nullptr);
}

}  // namespace mlp3d
