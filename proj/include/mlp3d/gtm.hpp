#pragma once

// Grouped Time Mixing.
//
// Tokens are laid out [..., T, C]; the time axis is second to last. Four
// grouping schemes mix tokens along time with an (S*C) x (S*C) linear map
// per group (or S stacked C x C taps for shift_token):
//
//   short_range   contiguous groups {gS, ..., gS+S-1}
//   long_range    strided groups {g, g+T/S, g+2T/S, ...}
//   shift_window  short_range on the sequence rolled by S/2, then rolled back
//   shift_token   y_t = sum_{i<S} x_{(t-i) mod T} w_i
//   full          short_range with S = T (oracle baseline)
//
// With weight sharing the group matrix is block-Toeplitz: block (j, k) is
// w_{k-j}, so w_d maps the input at in-group position j to the output at
// position j + d. Without sharing the group matrix is a free dense W_S.
//
// Dense operators use the row-vector convention y = x W, with x the
// flattened [T*C] token sequence of one spatial site.

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mlp3d/tensor.hpp"

namespace mlp3d {

enum class GtmKind { short_range, long_range, shift_window, shift_token, full };

std::string_view to_string(GtmKind kind);
GtmKind parse_gtm_kind(std::string_view name);
// short < long < window < token < full; used for deterministic tie-breaks.
int kind_order(GtmKind kind);

struct GtmConfig {
  GtmKind kind = GtmKind::short_range;
  std::size_t group = 4;
  bool shared = true;

  bool operator==(const GtmConfig&) const = default;
};

// Throws ConfigError unless cfg can run on a sequence of `time` tokens.
void validate_gtm(const GtmConfig& cfg, std::size_t time);

// Largest time distance (circular for the rolling kinds) between an input
// and an output token coupled by one application.
std::size_t temporal_span(const GtmConfig& cfg, std::size_t time);

template <class Real>
struct GtmWeights {
  std::size_t channels = 0;
  bool shared = true;
  // offsets[d - min_offset] is w_d, a C x C matrix.
  int min_offset = 0;
  std::vector<Tensor<Real>> offsets;
  // [C] when shared, [S*C] otherwise.
  Tensor<Real> bias;
  // [(S*C), (S*C)] when not shared.
  Tensor<Real> dense;
  std::size_t dense_group = 0;

  int max_offset() const { return min_offset + static_cast<int>(offsets.size()) - 1; }
  bool has_offset(int d) const { return d >= min_offset && d <= max_offset(); }
  const Tensor<Real>& offset(int d) const;
  Tensor<Real>& offset(int d);

  std::vector<NamedTensor<Real>> named_parameters(const std::string& prefix) const;
  std::size_t scalar_count() const;
};

// Allocates weights for cfg. With pool_group > 0 the shared pool spans
// offsets [-pool_group+1, pool_group-1] so any smaller group (and shift_token
// up to pool_group) can run from it. Values are N(0, stddev^2) truncated at
// 2 stddev, bias zero; pass rng == nullptr for all-zero weights.
template <class Real>
GtmWeights<Real> make_gtm_weights(const GtmConfig& cfg, std::size_t channels,
                                  std::size_t pool_group, std::mt19937_64* rng,
                                  double stddev = 0.02);

// Name of the pool entry for offset d: "w_+1", "w_0", "w_-2".
std::string offset_name(int d);

// Efficient path: reshape / transpose / roll / concat around one matmul.
template <class Real>
Tensor<Real> gtm_apply(const GtmConfig& cfg, const GtmWeights<Real>& weights,
                       const Tensor<Real>& x);

// Shift-token style mixing along an arbitrary axis of x[..., C]:
// y = sum_{i<taps} roll(x, axis, i) w_i + bias.
template <class Real>
Tensor<Real> circulant_mix(const Tensor<Real>& x, int axis, const std::vector<Tensor<Real>>& taps,
                           const Tensor<Real>& bias);

// The group matrix W_S of size (S*C) x (S*C) as a plain tensor.
template <class Real>
Tensor<Real> group_matrix(const GtmConfig& cfg, const GtmWeights<Real>& weights);

// Dense (T*C) x (T*C) operator W with gtm_apply(x) = x W + b.
template <class Real>
Tensor<Real> build_dense_time_matrix(const GtmConfig& cfg, std::size_t time,
                                     const GtmWeights<Real>& weights);
// The matching length-(T*C) bias b.
template <class Real>
std::vector<Real> build_dense_time_bias(const GtmConfig& cfg, std::size_t time,
                                        const GtmWeights<Real>& weights);

// Permutation matrices (with C x C identity blocks) relating the kinds:
// long_range = P W_sr P^T, shift_window = R W_sr R^T.
template <class Real>
Tensor<Real> long_range_permutation(std::size_t time, std::size_t group, std::size_t channels);
template <class Real>
Tensor<Real> time_roll_permutation(std::size_t time, long shift, std::size_t channels);

// Trainable scalars including bias:
//   shared partition kinds  (2S-1) C^2 + C
//   unshared                S^2 C^2 + S C
//   shift_token             S C^2 + C
std::uint64_t gtm_param_count(const GtmConfig& cfg, std::size_t channels);

// Multiply-accumulates for one application on an H x W x T x C grid:
// H W T S C^2 for grouped kinds, H W (T C)^2 for full.
std::uint64_t gtm_flop_count(const GtmConfig& cfg, std::size_t height, std::size_t width,
                             std::size_t time, std::size_t channels);

}  // namespace mlp3d
