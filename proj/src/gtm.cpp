#include "mlp3d/gtm.hpp"

#include <algorithm>
#include <cmath>

#include "mlp3d/errors.hpp"
#include "mlp3d/init.hpp"
#include "mlp3d/ops.hpp"

namespace mlp3d {

std::string_view to_string(GtmKind kind) {
  switch (kind) {
    case GtmKind::short_range:
      return "short_range";
    case GtmKind::long_range:
      return "long_range";
    case GtmKind::shift_window:
      return "shift_window";
    case GtmKind::shift_token:
      return "shift_token";
    case GtmKind::full:
      return "full";
  }
  return "?";
}

GtmKind parse_gtm_kind(std::string_view name) {
  for (auto k : {GtmKind::short_range, GtmKind::long_range, GtmKind::shift_window,
                 GtmKind::shift_token, GtmKind::full})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown GTM kind '" + std::string(name) +
                    "' (expected short_range, long_range, shift_window, shift_token or full)");
}

int kind_order(GtmKind kind) { return static_cast<int>(kind); }

namespace {

bool is_partition(GtmKind k) { return k != GtmKind::shift_token; }

std::string describe(const GtmConfig& cfg) {
  return std::string(to_string(cfg.kind)) + " S=" + std::to_string(cfg.group);
}

}  // namespace

void validate_gtm(const GtmConfig& cfg, std::size_t time) {
  if (cfg.group == 0) throw ConfigError("GTM group size must be positive");
  if (time == 0) throw ConfigError("GTM time extent must be positive");
  if (cfg.group > time) {
    throw ConfigError(describe(cfg) + " exceeds time extent T=" + std::to_string(time));
  }
  if (cfg.kind == GtmKind::full && cfg.group != time) {
    throw ConfigError("full time mixing needs S == T, got " + describe(cfg) +
                      " for T=" + std::to_string(time));
  }
  if (is_partition(cfg.kind) && time % cfg.group != 0) {
    throw ConfigError(describe(cfg) + " does not divide time extent T=" + std::to_string(time));
  }
}

namespace {

// Group membership: member j of group g sits at time slot(g, j).
struct Grouping {
  std::size_t time, group, groups;
  GtmKind kind;

  std::size_t slot(std::size_t g, std::size_t j) const {
    switch (kind) {
      case GtmKind::long_range:
        return j * groups + g;
      case GtmKind::shift_window: {
        const std::size_t h = group / 2;
        return (g * group + j + time - h) % time;
      }
      default:
        return g * group + j;
    }
  }
};

}  // namespace

std::size_t temporal_span(const GtmConfig& cfg, std::size_t time) {
  validate_gtm(cfg, time);
  std::vector<std::vector<bool>> coupled(time, std::vector<bool>(time, false));
  if (cfg.kind == GtmKind::shift_token) {
    for (std::size_t t = 0; t < time; ++t)
      for (std::size_t i = 0; i < cfg.group; ++i) coupled[(t + time - i) % time][t] = true;
  } else {
    Grouping grp{time, cfg.group, time / cfg.group, cfg.kind};
    for (std::size_t g = 0; g < grp.groups; ++g)
      for (std::size_t j = 0; j < cfg.group; ++j)
        for (std::size_t k = 0; k < cfg.group; ++k) coupled[grp.slot(g, j)][grp.slot(g, k)] = true;
  }
  std::size_t span = 0;
  for (std::size_t a = 0; a < time; ++a)
    for (std::size_t b = 0; b < time; ++b)
      if (coupled[a][b]) {
        const std::size_t d = a > b ? a - b : b - a;
        span = std::max(span, std::min(d, time - d));
      }
  return span;
}

std::string offset_name(int d) {
  if (d > 0) return "w_+" + std::to_string(d);
  return "w_" + std::to_string(d);
}

template <class Real>
const Tensor<Real>& GtmWeights<Real>::offset(int d) const {
  if (!has_offset(d)) {
    throw ConfigError("GTM weights hold offsets [" + std::to_string(min_offset) + ", " +
                      std::to_string(max_offset()) + "], offset " + std::to_string(d) +
                      " requested");
  }
  return offsets[static_cast<std::size_t>(d - min_offset)];
}

template <class Real>
Tensor<Real>& GtmWeights<Real>::offset(int d) {
  return const_cast<Tensor<Real>&>(std::as_const(*this).offset(d));
}

template <class Real>
std::vector<NamedTensor<Real>> GtmWeights<Real>::named_parameters(const std::string& prefix) const {
  std::vector<NamedTensor<Real>> out;
  for (std::size_t i = 0; i < offsets.size(); ++i)
    out.push_back({prefix + "." + offset_name(min_offset + static_cast<int>(i)), offsets[i]});
  if (!shared) out.push_back({prefix + ".W_S", dense});
  out.push_back({prefix + ".bias", bias});
  return out;
}

template <class Real>
std::size_t GtmWeights<Real>::scalar_count() const {
  std::size_t n = bias.numel();
  for (const auto& w : offsets) n += w.numel();
  if (!shared) n += dense.numel();
  return n;
}


template <class Real>
GtmWeights<Real> make_gtm_weights(const GtmConfig& cfg, std::size_t channels,
                                  std::size_t pool_group, std::mt19937_64* rng, double stddev) {
  if (channels == 0) throw ConfigError("GTM channel extent must be positive");
  if (cfg.group == 0) throw ConfigError("GTM group size must be positive");
  GtmWeights<Real> w;
  w.channels = channels;
  const bool shared = cfg.shared || cfg.kind == GtmKind::shift_token;
  w.shared = shared;
  if (!shared) {
    if (pool_group != 0) throw ConfigError("a shared offset pool cannot hold unshared GTM weights");
    const std::size_t n = cfg.group * channels;
    w.dense_group = cfg.group;
    w.dense = init_weight<Real>({n, n}, rng, stddev);
    w.bias = init_constant<Real>({n}, Real(0));
    return w;
  }
  int lo, hi;
  if (pool_group != 0) {
    if (pool_group < cfg.group) {
      throw ConfigError("offset pool of size " + std::to_string(pool_group) +
                        " cannot run " + describe(cfg));
    }
    lo = -static_cast<int>(pool_group) + 1;
    hi = static_cast<int>(pool_group) - 1;
  } else if (cfg.kind == GtmKind::shift_token) {
    lo = 0;
    hi = static_cast<int>(cfg.group) - 1;
  } else {
    lo = -static_cast<int>(cfg.group) + 1;
    hi = static_cast<int>(cfg.group) - 1;
  }
  w.min_offset = lo;
  for (int d = lo; d <= hi; ++d) w.offsets.push_back(init_weight<Real>({channels, channels}, rng, stddev));
  w.bias = init_constant<Real>({channels}, Real(0));
  return w;
}

template <class Real>
Tensor<Real> circulant_mix(const Tensor<Real>& x, int axis, const std::vector<Tensor<Real>>& taps,
                           const Tensor<Real>& bias) {
  if (taps.empty()) throw ConfigError("circulant mixing needs at least one tap");
  std::vector<Tensor<Real>> shifted;
  shifted.reserve(taps.size());
  for (std::size_t i = 0; i < taps.size(); ++i) shifted.push_back(roll(x, axis, static_cast<long>(i)));
  const Tensor<Real> stacked_in = taps.size() == 1 ? shifted[0] : concat(shifted, -1);
  const Tensor<Real> stacked_w = taps.size() == 1 ? taps[0] : concat(taps, 0);
  return add_bias(matmul(stacked_in, stacked_w), bias);
}

namespace {

template <class Real>
Tensor<Real> group_matrix_differentiable(const GtmConfig& cfg, const GtmWeights<Real>& w) {
  const std::size_t s = cfg.group;
  if (!w.shared) {
    if (w.dense_group != s) {
      throw ConfigError("unshared GTM weights were allocated for S=" +
                        std::to_string(w.dense_group) + ", applied with " + describe(cfg));
    }
    return w.dense;
  }
  std::vector<Tensor<Real>> tiles;
  std::vector<int> layout(s * s);
  const int lo = -static_cast<int>(s) + 1;
  for (int d = lo; d <= static_cast<int>(s) - 1; ++d) tiles.push_back(w.offset(d));
  for (std::size_t j = 0; j < s; ++j)
    for (std::size_t k = 0; k < s; ++k)
      layout[j * s + k] = static_cast<int>(k) - static_cast<int>(j) - lo;
  return assemble_blocks(tiles, layout, s, s);
}

}  // namespace

template <class Real>
Tensor<Real> gtm_apply(const GtmConfig& cfg, const GtmWeights<Real>& weights,
                       const Tensor<Real>& x) {
  if (x.rank() < 2) {
    throw DimensionError("gtm_apply: expected tokens [..., T, C], got " + shape_string(x.shape()));
  }
  const std::size_t T = x.dim(-2), C = x.dim(-1);
  if (C != weights.channels) {
    throw DimensionError("gtm_apply: tokens have C=" + std::to_string(C) + ", weights expect " +
                         std::to_string(weights.channels));
  }
  validate_gtm(cfg, T);
  const std::size_t S = cfg.group;

  if (cfg.kind == GtmKind::shift_token) {
    if (!weights.shared) throw ConfigError("shift_token GTM needs per-offset weights");
    std::vector<Tensor<Real>> taps;
    for (std::size_t i = 0; i < S; ++i) taps.push_back(weights.offset(static_cast<int>(i)));
    return circulant_mix(x, -2, taps, weights.bias);
  }

  const Tensor<Real> ws = group_matrix_differentiable(cfg, weights);
  const std::size_t N = x.numel() / (T * C);
  const std::size_t G = T / S;
  auto mix_groups = [&](const Tensor<Real>& grouped) {
    Tensor<Real> y = matmul(grouped, ws);
    return weights.shared ? y : add_bias(y, weights.bias);
  };

  Tensor<Real> y;
  switch (cfg.kind) {
    case GtmKind::short_range:
    case GtmKind::full:
      y = reshape(mix_groups(reshape(x, {N, G, S * C})), x.shape());
      break;
    case GtmKind::long_range: {
      Tensor<Real> g = transpose(reshape(x, {N, S, G, C}), 1, 2);
      g = mix_groups(reshape(g, {N, G, S * C}));
      y = reshape(transpose(reshape(g, {N, G, S, C}), 1, 2), x.shape());
      break;
    }
    case GtmKind::shift_window: {
      const long h = static_cast<long>(S / 2);
      Tensor<Real> g = roll(x, -2, h);
      g = reshape(mix_groups(reshape(g, {N, G, S * C})), x.shape());
      y = roll(g, -2, -h);
      break;
    }
    case GtmKind::shift_token:
      break;
  }
  return weights.shared ? add_bias(y, weights.bias) : y;
}

template <class Real>
Tensor<Real> group_matrix(const GtmConfig& cfg, const GtmWeights<Real>& weights) {
  const std::size_t s = cfg.group, c = weights.channels, n = s * c;
  std::vector<Real> v(n * n, Real(0));
  if (!weights.shared) {
    if (weights.dense_group != s) throw ConfigError("unshared GTM weights sized for another S");
    v.assign(weights.dense.data().begin(), weights.dense.data().end());
  } else {
    for (std::size_t j = 0; j < s; ++j)
      for (std::size_t k = 0; k < s; ++k) {
        const auto& w = weights.offset(static_cast<int>(k) - static_cast<int>(j)).data();
        for (std::size_t a = 0; a < c; ++a)
          for (std::size_t b = 0; b < c; ++b) v[(j * c + a) * n + k * c + b] = w[a * c + b];
      }
  }
  return Tensor<Real>::from({n, n}, std::move(v));
}

template <class Real>
Tensor<Real> build_dense_time_matrix(const GtmConfig& cfg, std::size_t time,
                                     const GtmWeights<Real>& weights) {
  validate_gtm(cfg, time);
  const std::size_t c = weights.channels, n = time * c, s = cfg.group;
  std::vector<Real> d(n * n, Real(0));
  if (cfg.kind == GtmKind::shift_token) {
    for (std::size_t t = 0; t < time; ++t)
      for (std::size_t i = 0; i < s; ++i) {
        const std::size_t src = (t + time - i) % time;
        const auto& w = weights.offset(static_cast<int>(i)).data();
        for (std::size_t a = 0; a < c; ++a)
          for (std::size_t b = 0; b < c; ++b) d[(src * c + a) * n + t * c + b] += w[a * c + b];
      }
    return Tensor<Real>::from({n, n}, std::move(d));
  }
  const Tensor<Real> ws = group_matrix(cfg, weights);
  const auto& wv = ws.data();
  const std::size_t sc = s * c;
  Grouping grp{time, s, time / s, cfg.kind};
  for (std::size_t g = 0; g < grp.groups; ++g)
    for (std::size_t j = 0; j < s; ++j)
      for (std::size_t k = 0; k < s; ++k) {
        const std::size_t tin = grp.slot(g, j), tout = grp.slot(g, k);
        for (std::size_t a = 0; a < c; ++a)
          for (std::size_t b = 0; b < c; ++b)
            d[(tin * c + a) * n + tout * c + b] = wv[(j * c + a) * sc + k * c + b];
      }
  return Tensor<Real>::from({n, n}, std::move(d));
}

template <class Real>
std::vector<Real> build_dense_time_bias(const GtmConfig& cfg, std::size_t time,
                                        const GtmWeights<Real>& weights) {
  validate_gtm(cfg, time);
  const std::size_t c = weights.channels, s = cfg.group;
  std::vector<Real> b(time * c);
  const auto& bv = weights.bias.data();
  if (weights.shared) {
    for (std::size_t t = 0; t < time; ++t) std::copy(bv.begin(), bv.end(), b.begin() + static_cast<long>(t * c));
    return b;
  }
  Grouping grp{time, s, time / s, cfg.kind};
  for (std::size_t g = 0; g < grp.groups; ++g)
    for (std::size_t j = 0; j < s; ++j) {
      const std::size_t t = grp.slot(g, j);
      std::copy(bv.begin() + static_cast<long>(j * c), bv.begin() + static_cast<long>((j + 1) * c),
                b.begin() + static_cast<long>(t * c));
    }
  return b;
}

namespace {

template <class Real>
Tensor<Real> time_permutation(std::size_t time, std::size_t channels,
                              const std::vector<std::size_t>& target) {
  const std::size_t n = time * channels;
  std::vector<Real> p(n * n, Real(0));
  for (std::size_t t = 0; t < time; ++t)
    for (std::size_t a = 0; a < channels; ++a) p[(t * channels + a) * n + target[t] * channels + a] = 1;
  return Tensor<Real>::from({n, n}, std::move(p));
}

}  // namespace

template <class Real>
Tensor<Real> long_range_permutation(std::size_t time, std::size_t group, std::size_t channels) {
  if (group == 0 || time % group != 0) throw ConfigError("long-range permutation needs S | T");
  const std::size_t g = time / group;
  std::vector<std::size_t> target(time);
  for (std::size_t t = 0; t < time; ++t) target[t] = (t % g) * group + t / g;
  return time_permutation<Real>(time, channels, target);
}

template <class Real>
Tensor<Real> time_roll_permutation(std::size_t time, long shift, std::size_t channels) {
  const long T = static_cast<long>(time);
  std::vector<std::size_t> target(time);
  for (long t = 0; t < T; ++t) target[static_cast<std::size_t>(t)] = static_cast<std::size_t>(((t + shift) % T + T) % T);
  return time_permutation<Real>(time, channels, target);
}

std::uint64_t gtm_param_count(const GtmConfig& cfg, std::size_t channels) {
  const std::uint64_t s = cfg.group, c = channels;
  if (cfg.kind == GtmKind::shift_token) return s * c * c + c;
  if (cfg.shared) return (2 * s - 1) * c * c + c;
  return s * s * c * c + s * c;
}

std::uint64_t gtm_flop_count(const GtmConfig& cfg, std::size_t height, std::size_t width,
                             std::size_t time, std::size_t channels) {
  validate_gtm(cfg, time);
  const std::uint64_t hw = static_cast<std::uint64_t>(height) * width;
  const std::uint64_t c = channels, t = time;
  if (cfg.kind == GtmKind::full) return hw * (t * c) * (t * c);
  // (T/S) groups of an (SC) x (SC) map, or T outputs of an (SC) x C map.
  return hw * t * cfg.group * c * c;
}

#define MLP3D_INSTANTIATE_GTM(R)                                                                  \
  template struct GtmWeights<R>;                                                                  \
  template GtmWeights<R> make_gtm_weights<R>(const GtmConfig&, std::size_t, std::size_t,          \
                                             std::mt19937_64*, double);                          \
  template Tensor<R> gtm_apply(const GtmConfig&, const GtmWeights<R>&, const Tensor<R>&);         \
  template Tensor<R> circulant_mix(const Tensor<R>&, int, const std::vector<Tensor<R>>&,          \
                                   const Tensor<R>&);                                             \
  template Tensor<R> group_matrix(const GtmConfig&, const GtmWeights<R>&);                        \
  template Tensor<R> build_dense_time_matrix(const GtmConfig&, std::size_t, const GtmWeights<R>&); \
  template std::vector<R> build_dense_time_bias(const GtmConfig&, std::size_t,                    \
                                                const GtmWeights<R>&);                            \
  template Tensor<R> long_range_permutation<R>(std::size_t, std::size_t, std::size_t);            \
  template Tensor<R> time_roll_permutation<R>(std::size_t, long, std::size_t);

MLP3D_INSTANTIATE_GTM(float)
MLP3D_INSTANTIATE_GTM(double)

}  // namespace mlp3d
