#include "mlp3d/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mlp3d/errors.hpp"
#include "mlp3d/init.hpp"

namespace mlp3d {

std::size_t NetworkSpec::block_count() const {
  return std::accumulate(depths.begin(), depths.end(), std::size_t{0});
}

StageGeometry NetworkSpec::stage_geometry(std::size_t stage) const {
  if (stage >= kStages) throw ConfigError("stage index out of range");
  const std::size_t shrink = std::size_t{1} << stage;
  return {height / embed_stride[0] / shrink, width / embed_stride[1] / shrink,
          time / embed_stride[2], channels[stage]};
}

std::size_t NetworkSpec::embed_features() const {
  return embed_window[0] * embed_window[1] * embed_window[2] * kInputChannels;
}

WindowGeometry NetworkSpec::window_geometry() const {
  WindowGeometry g;
  g.window = embed_window;
  g.stride = embed_stride;
  for (int a = 0; a < 3; ++a) {
    // Pad so that the output extent is exactly input / stride; the extra
    // element (for odd totals) goes after.
    const std::size_t total = embed_window[a] > embed_stride[a] ? embed_window[a] - embed_stride[a] : 0;
    g.pad_before[a] = a == 2 ? 0 : total / 2;
    g.pad_after[a] = a == 2 ? 0 : total - total / 2;
  }
  return g;
}

std::pair<std::size_t, std::size_t> NetworkSpec::block_position(std::size_t block) const {
  std::size_t b = block;
  for (std::size_t s = 0; s < kStages; ++s) {
    if (b < depths[s]) return {s, b};
    b -= depths[s];
  }
  throw ConfigError("block index " + std::to_string(block) + " out of range");
}

std::size_t NetworkSpec::window_h(std::size_t stage) const {
  return std::min(spatial_window, stage_geometry(stage).height);
}

std::size_t NetworkSpec::window_w(std::size_t stage) const {
  return std::min(spatial_window, stage_geometry(stage).width);
}

void validate_spec(const NetworkSpec& spec) {
  for (std::size_t s = 0; s < kStages; ++s) {
    if (spec.channels[s] == 0) throw ConfigError("stage channels must be positive");
    if (spec.depths[s] == 0) throw ConfigError("stage depths must be positive");
  }
  if (spec.num_classes == 0) throw ConfigError("num_classes must be positive");
  if (spec.mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
  if (spec.spatial_window == 0) throw ConfigError("spatial_window must be positive");
  if (spec.drop_path_rate < 0.0 || spec.drop_path_rate >= 1.0)
    throw ConfigError("drop_path_rate must lie in [0, 1)");
  if (spec.head_dropout < 0.0 || spec.head_dropout >= 1.0)
    throw ConfigError("head_dropout must lie in [0, 1)");
  if (spec.embed_window[2] != spec.embed_stride[2])
    throw ConfigError("temporal embedding window must equal its stride (no temporal padding)");
  for (int a = 0; a < 2; ++a)
    if (spec.embed_window[a] < spec.embed_stride[a])
      throw ConfigError("spatial embedding window must cover its stride");
  const std::size_t spatial_div = spec.embed_stride[0] * (std::size_t{1} << (kStages - 1));
  const std::size_t spatial_div_w = spec.embed_stride[1] * (std::size_t{1} << (kStages - 1));
  if (spec.height == 0 || spec.height % spatial_div != 0)
    throw ConfigError("height " + std::to_string(spec.height) + " must be a positive multiple of " +
                      std::to_string(spatial_div));
  if (spec.width == 0 || spec.width % spatial_div_w != 0)
    throw ConfigError("width " + std::to_string(spec.width) + " must be a positive multiple of " +
                      std::to_string(spatial_div_w));
  if (spec.time == 0 || spec.time % spec.embed_stride[2] != 0)
    throw ConfigError("time " + std::to_string(spec.time) + " must be a positive multiple of " +
                      std::to_string(spec.embed_stride[2]));
  if (spec.gtm_per_block.size() != spec.block_count()) {
    throw ConfigError("gtm_per_block has " + std::to_string(spec.gtm_per_block.size()) +
                      " entries for " + std::to_string(spec.block_count()) + " blocks");
  }
  const std::size_t t = spec.time / spec.embed_stride[2];
  for (std::size_t b = 0; b < spec.gtm_per_block.size(); ++b) {
    try {
      validate_gtm(spec.gtm_per_block[b], t);
    } catch (const ConfigError& e) {
      throw ConfigError("block " + std::to_string(b) + ": " + e.what());
    }
  }
}

std::vector<std::string> variant_names() { return {"XS", "S", "M", "L", "micro", "custom"}; }

void set_all_gtm(NetworkSpec& spec, const GtmConfig& cfg) {
  spec.gtm_per_block.assign(spec.block_count(), cfg);
}

NetworkSpec make_variant(const std::string& name, std::size_t height, std::size_t width,
                         std::size_t time, std::size_t num_classes) {
  NetworkSpec spec;
  spec.name = name;
  if (name == "XS") {
    spec.channels = {64, 128, 320, 512};
    spec.depths = {2, 2, 4, 2};
  } else if (name == "S") {
    spec.channels = {64, 128, 320, 512};
    spec.depths = {2, 3, 10, 3};
  } else if (name == "M") {
    spec.channels = {64, 128, 320, 512};
    spec.depths = {3, 4, 18, 3};
  } else if (name == "L") {
    spec.channels = {96, 192, 384, 768};
    spec.depths = {3, 4, 24, 3};
  } else if (name == "micro" || name == "custom") {
    spec.channels = {16, 32, 48, 64};
    spec.depths = {1, 1, 2, 1};
  } else {
    std::string valid;
    for (const auto& n : variant_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown variant '" + name + "' (valid: " + valid + ")");
  }
  spec.height = height;
  spec.width = width;
  spec.time = time;
  spec.num_classes = num_classes;
  const std::size_t t = std::max<std::size_t>(1, time / spec.embed_stride[2]);
  std::size_t s = 1;
  for (std::size_t cand : {4, 2}) {
    if (t % cand == 0) {
      s = cand;
      break;
    }
  }
  set_all_gtm(spec, GtmConfig{GtmKind::short_range, s, true});
  return spec;
}

template <class Real>
std::vector<NamedTensor<Real>> ModelParams<Real>::named_parameters() const {
  std::vector<NamedTensor<Real>> out;
  out.push_back({"embed.weight", embed_weight});
  out.push_back({"embed.bias", embed_bias});
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t j = 0; j < stages[s].size(); ++j) {
      const std::string prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(j + 1);
      for (auto& p : stages[s][j].named_parameters(prefix)) out.push_back(std::move(p));
    }
    if (s < transitions.size()) {
      const std::string prefix = "transition" + std::to_string(s + 1);
      out.push_back({prefix + ".ln.gamma", transitions[s].ln_gamma});
      out.push_back({prefix + ".ln.beta", transitions[s].ln_beta});
      out.push_back({prefix + ".weight", transitions[s].weight});
    }
  }
  out.push_back({"head.weight", head_weight});
  out.push_back({"head.bias", head_bias});
  return out;
}

template <class Real>
std::vector<Tensor<Real>> ModelParams<Real>::parameters() const {
  std::vector<Tensor<Real>> out;
  for (auto& p : named_parameters()) out.push_back(p.tensor);
  return out;
}

template <class Real>
std::size_t ModelParams<Real>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

template <class Real>
BlockParams<Real>& ModelParams<Real>::block(const NetworkSpec& spec, std::size_t b) {
  auto [s, j] = spec.block_position(b);
  return stages.at(s).at(j);
}

template <class Real>
const BlockParams<Real>& ModelParams<Real>::block(const NetworkSpec& spec, std::size_t b) const {
  auto [s, j] = spec.block_position(b);
  return stages.at(s).at(j);
}

template <class Real>
ModelParams<Real> init_params(const NetworkSpec& spec, std::mt19937_64& rng,
                              const InitOptions& options) {
  validate_spec(spec);
  ModelParams<Real> p;
  p.pool_group = options.pool_group;
  const double sd = options.stddev;
  p.embed_weight = init_weight<Real>({spec.embed_features(), spec.channels[0]}, &rng, sd);
  p.embed_bias = init_constant<Real>({spec.channels[0]}, Real(0));
  std::size_t b = 0;
  for (std::size_t s = 0; s < kStages; ++s) {
    std::vector<BlockParams<Real>> stage;
    for (std::size_t j = 0; j < spec.depths[s]; ++j, ++b) {
      BlockShape shape;
      shape.mixing.channels = spec.channels[s];
      shape.mixing.window_h = spec.window_h(s);
      shape.mixing.window_w = spec.window_w(s);
      shape.mixing.time = spec.gtm_per_block[b];
      shape.mixing.pool_group = options.pool_group;
      shape.mlp_ratio = spec.mlp_ratio;
      shape.drop_path_rate = spec.drop_path_rate;
      stage.push_back(make_block_params<Real>(shape, &rng, sd));
    }
    p.stages.push_back(std::move(stage));
    if (s + 1 < kStages) {
      const std::size_t merged = 4 * spec.channels[s];
      TransitionParams<Real> t;
      t.ln_gamma = init_constant<Real>({merged}, Real(1));
      t.ln_beta = init_constant<Real>({merged}, Real(0));
      t.weight = init_weight<Real>({merged, spec.channels[s + 1]}, &rng, sd);
      p.transitions.push_back(std::move(t));
    }
  }
  p.head_weight = init_weight<Real>({spec.channels[kStages - 1], spec.num_classes}, &rng, sd);
  p.head_bias = init_constant<Real>({spec.num_classes}, Real(0));
  return p;
}

template <class Real>
Tensor<Real> tubelet_embed(const Tensor<Real>& clip, const NetworkSpec& spec,
                           const ModelParams<Real>& params) {
  if (clip.rank() != 5 || clip.dim(1) != spec.height || clip.dim(2) != spec.width ||
      clip.dim(3) != spec.time || clip.dim(4) != kInputChannels) {
    throw ConfigError("clip " + shape_string(clip.shape()) + " does not match spec geometry " +
                      std::to_string(spec.height) + "x" + std::to_string(spec.width) + "x" +
                      std::to_string(spec.time) + "x3");
  }
  const Tensor<Real> windows = extract_windows(clip, spec.window_geometry());
  return add_bias(matmul(windows, params.embed_weight), params.embed_bias);
}

template <class Real>
Tensor<Real> stage_transition(const Tensor<Real>& x, const TransitionParams<Real>& params) {
  if (x.rank() != 5) throw DimensionError("stage_transition: expected [B,h,w,t,C], got " + shape_string(x.shape()));
  const std::size_t B = x.dim(0), h = x.dim(1), w = x.dim(2), t = x.dim(3), c = x.dim(4);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ConfigError("stage_transition: spatial extents " + std::to_string(h) + "x" +
                      std::to_string(w) + " must be even");
  }
  if (params.weight.dim(0) != 4 * c) {
    throw DimensionError("stage_transition: merge weight " + shape_string(params.weight.shape()) +
                         " does not take 4x" + std::to_string(c) + " channels");
  }
  Tensor<Real> m = reshape(x, {B, h / 2, 2, w / 2, 2, t, c});
  m = permute(m, {0, 1, 3, 5, 2, 4, 6});
  m = reshape(m, {B, h / 2, w / 2, t, 4 * c});
  return matmul(layer_norm(m, params.ln_gamma, params.ln_beta), params.weight);
}

template <class Real>
Tensor<Real> network_forward(const Tensor<Real>& clip, const NetworkSpec& spec,
                             const ModelParams<Real>& params, const ForwardOptions& options,
                             const ActivationObserver<Real>* observer) {
  validate_spec(spec);
  const bool batched = clip.rank() == 5;
  Tensor<Real> input = clip;
  if (!batched) {
    if (clip.rank() != 4) throw DimensionError("network_forward: clip must be [B,H,W,T,3] or [H,W,T,3]");
    Shape s = clip.shape();
    s.insert(s.begin(), 1);
    input = reshape(clip, s);
  }
  if (options.training && (spec.drop_path_rate > 0.0 || spec.head_dropout > 0.0) && !options.rng)
    throw ParameterError("network_forward: stochastic training needs a random stream");
  auto note = [&](const std::string& name, const Tensor<Real>& v) {
    if (observer) (*observer)(name, v);
  };

  Tensor<Real> x = tubelet_embed(input, spec, params);
  note("embed", x);
  std::size_t b = 0;
  for (std::size_t s = 0; s < kStages; ++s) {
    for (std::size_t j = 0; j < spec.depths[s]; ++j, ++b) {
      x = block_forward(x, params.stages[s][j], spec.gtm_per_block[b], options.training, options.rng);
      note("stage" + std::to_string(s + 1) + ".block" + std::to_string(j + 1), x);
    }
    if (s + 1 < kStages) {
      x = stage_transition(x, params.transitions[s]);
      note("transition" + std::to_string(s + 1), x);
    }
  }
  Tensor<Real> pooled = mean(x, {1, 2, 3});
  note("pooled", pooled);
  if (options.training && spec.head_dropout > 0.0)
    pooled = dropout(pooled, static_cast<Real>(spec.head_dropout), *options.rng);
  Tensor<Real> logits = add_bias(matmul(pooled, params.head_weight), params.head_bias);
  if (!batched) logits = reshape(logits, {spec.num_classes});
  note("logits", logits);
  return logits;
}

CostReport cost_report(const NetworkSpec& spec, std::size_t pool_group) {
  validate_spec(spec);
  CostReport r;
  const auto g0 = spec.stage_geometry(0);
  const std::uint64_t tokens0 = std::uint64_t{g0.height} * g0.width * g0.time;
  r.embed_params = std::uint64_t{spec.embed_features()} * g0.channels + g0.channels;
  r.embed_macs = tokens0 * spec.embed_features() * g0.channels;

  std::size_t b = 0;
  for (std::size_t s = 0; s < kStages; ++s) {
    const auto g = spec.stage_geometry(s);
    const std::uint64_t c = g.channels, hidden = spec.mlp_ratio * c;
    const std::uint64_t tokens = std::uint64_t{g.height} * g.width * g.time;
    const std::uint64_t wh = spec.window_h(s), ww = spec.window_w(s);
    for (std::size_t j = 0; j < spec.depths[s]; ++j, ++b) {
      BlockCost bc;
      bc.stage = s;
      bc.index = j;
      bc.gtm = spec.gtm_per_block[b];
      bc.gtm_params = pool_group > 0 ? (2 * std::uint64_t{pool_group} - 1) * c * c + c
                                     : gtm_param_count(bc.gtm, g.channels);
      bc.gtm_macs = gtm_flop_count(bc.gtm, g.height, g.width, g.time, g.channels);
      const std::uint64_t spatial_params = (wh + ww) * c * c + 2 * c;
      const std::uint64_t mixing_params = spatial_params + bc.gtm_params + 3 * c + c * c + c;
      const std::uint64_t mlp_params = c * hidden + hidden + hidden * c + c;
      bc.params = 4 * c + mixing_params + mlp_params;
      bc.macs = tokens * ((wh + ww) * c * c + c * c + 2 * c * hidden) + bc.gtm_macs;
      r.stage_params[s] += bc.params;
      r.stage_macs[s] += bc.macs;
      r.blocks.push_back(bc);
    }
    if (s + 1 < kStages) {
      const std::uint64_t merged = 4 * c, next = spec.channels[s + 1];
      r.transition_params[s] = 2 * merged + merged * next;
      r.transition_macs[s] = (tokens / 4) * merged * next;
    }
  }
  const std::uint64_t c4 = spec.channels[kStages - 1], k = spec.num_classes;
  r.head_params = c4 * k + k;
  r.head_macs = c4 * k;
  r.params = r.embed_params + r.head_params;
  r.macs = r.embed_macs + r.head_macs;
  for (std::size_t s = 0; s < kStages; ++s) {
    r.params += r.stage_params[s];
    r.macs += r.stage_macs[s];
  }
  for (std::size_t s = 0; s + 1 < kStages; ++s) {
    r.params += r.transition_params[s];
    r.macs += r.transition_macs[s];
  }
  return r;
}

std::uint64_t count_params(const NetworkSpec& spec) { return cost_report(spec).params; }
std::uint64_t count_flops(const NetworkSpec& spec) { return cost_report(spec).macs; }

std::size_t temporal_center(std::size_t window) { return window / 2; }

template <class Real>
ModelParams<Real> center_init(const NetworkSpec& spec, const Reference2d<Real>& reference,
                              std::mt19937_64& rng, const InitOptions& options) {
  ModelParams<Real> p = init_params<Real>(spec, rng, options);
  const std::size_t kh = spec.embed_window[0], kw = spec.embed_window[1], kt = spec.embed_window[2];
  const std::size_t c1 = spec.channels[0], cin = kInputChannels;
  if (reference.embed_weight.rank() != 2 || reference.embed_weight.dim(0) != kh * kw * cin ||
      reference.embed_weight.dim(1) != c1) {
    throw DimensionError("center_init: 2D embedding " + shape_string(reference.embed_weight.shape()) +
                         " does not match [" + std::to_string(kh * kw * cin) + "," +
                         std::to_string(c1) + "]");
  }
  if (reference.channel_mix.size() != spec.block_count()) {
    throw DimensionError("center_init: " + std::to_string(reference.channel_mix.size()) +
                         " channel-mix matrices for " + std::to_string(spec.block_count()) +
                         " blocks");
  }
  const std::size_t centre = temporal_center(kt);
  auto embed = p.embed_weight.mutable_data();
  std::fill(embed.begin(), embed.end(), Real(0));
  const auto& ref = reference.embed_weight.data();
  for (std::size_t dh = 0; dh < kh; ++dh)
    for (std::size_t dw = 0; dw < kw; ++dw)
      for (std::size_t c = 0; c < cin; ++c) {
        const std::size_t row3 = ((dh * kw + dw) * kt + centre) * cin + c;
        const std::size_t row2 = (dh * kw + dw) * cin + c;
        std::copy(ref.begin() + static_cast<long>(row2 * c1),
                  ref.begin() + static_cast<long>((row2 + 1) * c1),
                  embed.begin() + static_cast<long>(row3 * c1));
      }
  if (reference.embed_bias) {
    if (reference.embed_bias->numel() != c1) throw DimensionError("center_init: embed bias size mismatch");
    std::copy(reference.embed_bias->data().begin(), reference.embed_bias->data().end(),
              p.embed_bias.mutable_data().begin());
  }

  for (std::size_t b = 0; b < spec.block_count(); ++b) {
    auto& gtm = p.block(spec, b).mixing.time;
    const auto& mix = reference.channel_mix[b];
    const std::size_t c = gtm.channels;
    if (mix.rank() != 2 || mix.dim(0) != c || mix.dim(1) != c) {
      throw DimensionError("center_init: block " + std::to_string(b) + " channel mix " +
                           shape_string(mix.shape()) + " is not " + std::to_string(c) + "x" +
                           std::to_string(c));
    }
    if (gtm.shared) {
      for (int d = gtm.min_offset; d <= gtm.max_offset(); ++d) {
        auto w = gtm.offset(d).mutable_data();
        if (d == 0)
          std::copy(mix.data().begin(), mix.data().end(), w.begin());
        else
          std::fill(w.begin(), w.end(), Real(0));
      }
    } else {
      auto w = gtm.dense.mutable_data();
      std::fill(w.begin(), w.end(), Real(0));
      const std::size_t n = gtm.dense_group * c;
      for (std::size_t j = 0; j < gtm.dense_group; ++j)
        for (std::size_t a = 0; a < c; ++a)
          for (std::size_t bb = 0; bb < c; ++bb) w[(j * c + a) * n + j * c + bb] = mix.data()[a * c + bb];
    }
    auto bias = gtm.bias.mutable_data();
    std::fill(bias.begin(), bias.end(), Real(0));
  }
  return p;
}

namespace {

// Applies fn to every span that carries time coupling.
template <class Real, class Fn>
void for_each_time_coupling(ModelParams<Real>& params, const NetworkSpec& spec, bool grads, Fn fn) {
  auto pick = [grads](Tensor<Real>& t) -> std::span<Real> {
    return grads ? (t.has_grad() ? t.mutable_grad() : std::span<Real>{}) : t.mutable_data();
  };
  const std::size_t kh = spec.embed_window[0], kw = spec.embed_window[1], kt = spec.embed_window[2];
  const std::size_t c1 = spec.channels[0], centre = temporal_center(kt);
  auto embed = pick(params.embed_weight);
  if (!embed.empty()) {
    for (std::size_t dh = 0; dh < kh; ++dh)
      for (std::size_t dw = 0; dw < kw; ++dw)
        for (std::size_t dt = 0; dt < kt; ++dt) {
          if (dt == centre) continue;
          for (std::size_t c = 0; c < kInputChannels; ++c) {
            const std::size_t row = ((dh * kw + dw) * kt + dt) * kInputChannels + c;
            fn(embed.subspan(row * c1, c1));
          }
        }
  }
  for (std::size_t b = 0; b < spec.block_count(); ++b) {
    auto& gtm = params.block(spec, b).mixing.time;
    if (gtm.shared) {
      for (int d = gtm.min_offset; d <= gtm.max_offset(); ++d)
        if (d != 0) {
          auto w = pick(gtm.offset(d));
          if (!w.empty()) fn(w);
        }
    } else {
      auto w = pick(gtm.dense);
      if (w.empty()) continue;
      const std::size_t c = gtm.channels, s = gtm.dense_group, n = s * c;
      for (std::size_t j = 0; j < s; ++j)
        for (std::size_t k = 0; k < s; ++k)
          if (j != k)
            for (std::size_t a = 0; a < c; ++a) fn(w.subspan((j * c + a) * n + k * c, c));
    }
  }
}

}  // namespace

template <class Real>
void make_order_blind(ModelParams<Real>& params, const NetworkSpec& spec) {
  for_each_time_coupling(params, spec, false, [](std::span<Real> s) { std::fill(s.begin(), s.end(), Real(0)); });
}

template <class Real>
void mask_order_blind_gradients(ModelParams<Real>& params, const NetworkSpec& spec) {
  for_each_time_coupling(params, spec, true, [](std::span<Real> s) { std::fill(s.begin(), s.end(), Real(0)); });
}

template <class Real>
double time_constancy_deviation(const Tensor<Real>& x) {
  if (x.rank() < 2) throw DimensionError("time_constancy_deviation: need [..., t, C]");
  const std::size_t t = x.dim(-2), c = x.dim(-1), outer = x.numel() / (t * c);
  double worst = 0.0;
  const auto& v = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 1; k < t; ++k)
      for (std::size_t j = 0; j < c; ++j) {
        const double d = std::abs(static_cast<double>(v[(o * t + k) * c + j]) -
                                  static_cast<double>(v[(o * t) * c + j]));
        worst = std::max(worst, d);
      }
  return worst;
}

#define MLP3D_INSTANTIATE_NETWORK(R)                                                            \
  template struct ModelParams<R>;                                                               \
  template ModelParams<R> init_params<R>(const NetworkSpec&, std::mt19937_64&, const InitOptions&); \
  template Tensor<R> tubelet_embed(const Tensor<R>&, const NetworkSpec&, const ModelParams<R>&); \
  template Tensor<R> stage_transition(const Tensor<R>&, const TransitionParams<R>&);            \
  template Tensor<R> network_forward(const Tensor<R>&, const NetworkSpec&, const ModelParams<R>&, \
                                     const ForwardOptions&, const ActivationObserver<R>*);      \
  template ModelParams<R> center_init(const NetworkSpec&, const Reference2d<R>&,                \
                                      std::mt19937_64&, const InitOptions&);                    \
  template void make_order_blind(ModelParams<R>&, const NetworkSpec&);                          \
  template void mask_order_blind_gradients(ModelParams<R>&, const NetworkSpec&);                \
  template double time_constancy_deviation(const Tensor<R>&);

MLP3D_INSTANTIATE_NETWORK(float)
MLP3D_INSTANTIATE_NETWORK(double)

}  // namespace mlp3d
