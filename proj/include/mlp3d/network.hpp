#pragma once

// The staged MLP-3D network:
//
//   clip [B, H, W, T, 3]
//     -> tubelet embedding (7x7x4 windows, stride 4)   [B, H/4, W/4, T/4, C1]
//     -> stage 1 blocks -> transition -> stage 2 ... -> stage 4 blocks
//     -> mean over (H, W, T) -> linear head            [B, num_classes]
//
// Transitions merge 2x2 spatial patches (time untouched), normalize the
// 4C concatenation and project to the next stage width.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mlp3d/block.hpp"
#include "mlp3d/gtm.hpp"
#include "mlp3d/ops.hpp"
#include "mlp3d/tensor.hpp"

namespace mlp3d {

inline constexpr std::size_t kStages = 4;
inline constexpr std::size_t kInputChannels = 3;

struct StageGeometry {
  std::size_t height, width, time, channels;
};

struct NetworkSpec {
  std::string name = "custom";
  std::array<std::size_t, kStages> channels{64, 128, 320, 512};
  std::array<std::size_t, kStages> depths{2, 2, 4, 2};
  std::vector<GtmConfig> gtm_per_block;
  std::size_t height = 128;
  std::size_t width = 128;
  std::size_t time = 64;
  std::size_t num_classes = 174;
  std::array<std::size_t, 3> embed_window{7, 7, 4};
  std::array<std::size_t, 3> embed_stride{4, 4, 4};
  std::size_t mlp_ratio = 4;
  // Spatial circulant window; clipped to each stage's extent.
  std::size_t spatial_window = 7;
  double drop_path_rate = 0.0;
  double head_dropout = 0.0;

  std::size_t block_count() const;
  // Token grid and width of stage i (0-based).
  StageGeometry stage_geometry(std::size_t stage) const;
  std::size_t embed_features() const;
  WindowGeometry window_geometry() const;
  // (stage, index-in-stage) of global block b.
  std::pair<std::size_t, std::size_t> block_position(std::size_t block) const;
  std::size_t window_h(std::size_t stage) const;
  std::size_t window_w(std::size_t stage) const;

  bool operator==(const NetworkSpec&) const = default;
};

// Throws ConfigError on any inconsistency (geometry, per-block configs).
void validate_spec(const NetworkSpec& spec);

std::vector<std::string> variant_names();

// XS / S / M / L from the variant table, or "micro" (= "custom") with
// channels (16, 32, 48, 64) and depths (1, 1, 2, 1). Every block gets a
// shared short_range GTM with the largest S in {4, 2, 1} dividing T/4.
NetworkSpec make_variant(const std::string& name, std::size_t height = 128,
                         std::size_t width = 128, std::size_t time = 64,
                         std::size_t num_classes = 174);

// Sets every block to the same time-mixing choice.
void set_all_gtm(NetworkSpec& spec, const GtmConfig& cfg);

template <class Real>
struct TransitionParams {
  Tensor<Real> ln_gamma, ln_beta;  // [4 C_i]
  Tensor<Real> weight;             // [4 C_i, C_{i+1}]
};

template <class Real>
struct ModelParams {
  Tensor<Real> embed_weight;  // [7*7*4*3, C1], rows in (dh, dw, dt, c) order
  Tensor<Real> embed_bias;    // [C1]
  std::vector<std::vector<BlockParams<Real>>> stages;
  std::vector<TransitionParams<Real>> transitions;
  Tensor<Real> head_weight;  // [C4, K]
  Tensor<Real> head_bias;    // [K]
  // > 0 when every time-mixing branch holds a shared offset pool.
  std::size_t pool_group = 0;

  std::vector<NamedTensor<Real>> named_parameters() const;
  std::vector<Tensor<Real>> parameters() const;
  std::size_t scalar_count() const;
  BlockParams<Real>& block(const NetworkSpec& spec, std::size_t b);
  const BlockParams<Real>& block(const NetworkSpec& spec, std::size_t b) const;
};

struct InitOptions {
  double stddev = 0.02;
  // > 0 allocates shared offset pools of this size (supernet weights).
  std::size_t pool_group = 0;
};

template <class Real>
ModelParams<Real> init_params(const NetworkSpec& spec, std::mt19937_64& rng,
                              const InitOptions& options = {});

// [B, H, W, T, 3] -> [B, H/4, W/4, T/4, C1]
template <class Real>
Tensor<Real> tubelet_embed(const Tensor<Real>& clip, const NetworkSpec& spec,
                           const ModelParams<Real>& params);

// [B, h, w, t, C_i] -> [B, h/2, w/2, t, C_{i+1}]
template <class Real>
Tensor<Real> stage_transition(const Tensor<Real>& x, const TransitionParams<Real>& params);

// Called with ("embed" | "stageI.blockJ" | "transitionI" | "pooled" | "logits", value).
template <class Real>
using ActivationObserver = std::function<void(const std::string&, const Tensor<Real>&)>;

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

// clip is [B, H, W, T, 3] (logits [B, K]) or [H, W, T, 3] (logits [K]).
template <class Real>
Tensor<Real> network_forward(const Tensor<Real>& clip, const NetworkSpec& spec,
                             const ModelParams<Real>& params, const ForwardOptions& options = {},
                             const ActivationObserver<Real>* observer = nullptr);

// Cost accounting. MACs count the multiply-accumulates of every linear
// map; normalization, activations, fusion weights and pooling are excluded.
struct BlockCost {
  std::size_t stage = 0, index = 0;
  GtmConfig gtm;
  std::uint64_t params = 0, macs = 0;
  std::uint64_t gtm_params = 0, gtm_macs = 0;
};

struct CostReport {
  std::uint64_t params = 0, macs = 0;
  std::uint64_t embed_params = 0, embed_macs = 0;
  std::array<std::uint64_t, kStages> stage_params{}, stage_macs{};
  std::array<std::uint64_t, kStages - 1> transition_params{}, transition_macs{};
  std::uint64_t head_params = 0, head_macs = 0;
  std::vector<BlockCost> blocks;
};

// pool_group > 0 counts supernet allocation (each time branch holds the
// full offset pool) instead of the per-block configs.
CostReport cost_report(const NetworkSpec& spec, std::size_t pool_group = 0);
std::uint64_t count_params(const NetworkSpec& spec);
std::uint64_t count_flops(const NetworkSpec& spec);

// 2D weights placed at the temporal centre of the 3D model.
template <class Real>
struct Reference2d {
  Tensor<Real> embed_weight;                // [7*7*3, C1], rows in (dh, dw, c) order
  std::optional<Tensor<Real>> embed_bias;   // [C1]
  std::vector<Tensor<Real>> channel_mix;    // per block, C x C
};

// Index of the centre slice of an even or odd temporal window (ties go to
// the later slice): 2 for a window of 4.
std::size_t temporal_center(std::size_t window);

template <class Real>
ModelParams<Real> center_init(const NetworkSpec& spec, const Reference2d<Real>& reference,
                              std::mt19937_64& rng, const InitOptions& options = {});

// Zeroes every time-coupling weight: w_d for d != 0 in all GTM branches
// (off-diagonal blocks when unshared) and the off-centre temporal slices of
// the embedding. With shared time weights the network then cannot see frame
// order; unshared diagonal blocks still differ by in-group position.
template <class Real>
void make_order_blind(ModelParams<Real>& params, const NetworkSpec& spec);
// Same zeroing applied to gradients, for training with those weights frozen.
template <class Real>
void mask_order_blind_gradients(ModelParams<Real>& params, const NetworkSpec& spec);

// max |x[..., t, :] - x[..., 0, :]| over a [B, h, w, t, C] activation.
template <class Real>
double time_constancy_deviation(const Tensor<Real>& x);

}  // namespace mlp3d
