#include "mlp3d/mixing.hpp"

#include <cmath>

#include "mlp3d/errors.hpp"
#include "mlp3d/init.hpp"
#include "mlp3d/ops.hpp"

namespace mlp3d {

template <class Real>
std::vector<NamedTensor<Real>> AxisMixWeights<Real>::named_parameters(
    const std::string& prefix) const {
  std::vector<NamedTensor<Real>> out;
  for (std::size_t i = 0; i < taps.size(); ++i)
    out.push_back({prefix + ".w_" + std::to_string(i), taps[i]});
  out.push_back({prefix + ".bias", bias});
  return out;
}

template <class Real>
std::size_t AxisMixWeights<Real>::scalar_count() const {
  std::size_t n = bias.numel();
  for (const auto& t : taps) n += t.numel();
  return n;
}

template <class Real>
AxisMixWeights<Real> make_axis_mix_weights(std::size_t channels, std::size_t window,
                                           std::mt19937_64* rng, double stddev) {
  if (window == 0) throw ConfigError("spatial mixing window must be positive");
  AxisMixWeights<Real> w;
  for (std::size_t i = 0; i < window; ++i)
    w.taps.push_back(init_weight<Real>({channels, channels}, rng, stddev));
  w.bias = init_constant<Real>({channels}, Real(0));
  return w;
}

template <class Real>
Tensor<Real> axis_mix(const Tensor<Real>& x, SpatialAxis axis, const AxisMixWeights<Real>& w) {
  if (x.rank() < 4) {
    throw DimensionError("axis_mix: expected tokens [..., H, W, T, C], got " +
                         shape_string(x.shape()));
  }
  const int ax = axis == SpatialAxis::height ? -4 : -3;
  if (w.window() > x.dim(ax)) {
    throw ConfigError(std::string("axis_mix: window ") + std::to_string(w.window()) +
                      " exceeds " + (axis == SpatialAxis::height ? "height " : "width ") +
                      std::to_string(x.dim(ax)));
  }
  if (w.bias.numel() != x.dim(-1)) {
    throw DimensionError("axis_mix: weights sized for C=" + std::to_string(w.bias.numel()) +
                         ", tokens have C=" + std::to_string(x.dim(-1)));
  }
  return circulant_mix(x, ax, w.taps, w.bias);
}

template <class Real>
std::vector<NamedTensor<Real>> MixingParams<Real>::named_parameters(
    const std::string& prefix) const {
  std::vector<NamedTensor<Real>> out = height.named_parameters(prefix + ".h_weights");
  for (auto& p : width.named_parameters(prefix + ".w_weights")) out.push_back(std::move(p));
  for (auto& p : time.named_parameters(prefix + ".t_weights")) out.push_back(std::move(p));
  out.push_back({prefix + ".fuse_logits", fuse_logits});
  out.push_back({prefix + ".proj.weight", proj_weight});
  out.push_back({prefix + ".proj.bias", proj_bias});
  return out;
}

template <class Real>
std::size_t MixingParams<Real>::scalar_count() const {
  return height.scalar_count() + width.scalar_count() + time.scalar_count() +
         fuse_logits.numel() + proj_weight.numel() + proj_bias.numel();
}

template <class Real>
MixingParams<Real> make_mixing_params(const MixingShape& shape, std::mt19937_64* rng,
                                      double stddev) {
  const std::size_t c = shape.channels;
  MixingParams<Real> p;
  p.height = make_axis_mix_weights<Real>(c, shape.window_h, rng, stddev);
  p.width = make_axis_mix_weights<Real>(c, shape.window_w, rng, stddev);
  p.time_config = shape.time;
  p.time = make_gtm_weights<Real>(shape.time, c, shape.pool_group, rng, stddev);
  p.fuse_logits = init_constant<Real>({3, c}, Real(0));
  p.proj_weight = init_weight<Real>({c, c}, rng, stddev);
  p.proj_bias = init_constant<Real>({c}, Real(0));
  return p;
}

template <class Real>
Tensor<Real> branch_weights(const MixingParams<Real>& params) {
  return softmax(params.fuse_logits, 0);
}

template <class Real>
Tensor<Real> token_mixing_forward(const Tensor<Real>& x, const MixingParams<Real>& params,
                                  const GtmConfig& time_config) {
  const Tensor<Real> xh = axis_mix(x, SpatialAxis::height, params.height);
  const Tensor<Real> xw = axis_mix(x, SpatialAxis::width, params.width);
  const Tensor<Real> xt = gtm_apply(time_config, params.time, x);
  const Tensor<Real> beta = branch_weights(params);
  Tensor<Real> fused = mul_lastdim(xh, select_leading(beta, 0));
  fused = add(fused, mul_lastdim(xw, select_leading(beta, 1)));
  fused = add(fused, mul_lastdim(xt, select_leading(beta, 2)));
  return add_bias(matmul(fused, params.proj_weight), params.proj_bias);
}

#define MLP3D_INSTANTIATE_MIXING(R)                                                               \
  template struct AxisMixWeights<R>;                                                              \
  template struct MixingParams<R>;                                                                \
  template AxisMixWeights<R> make_axis_mix_weights<R>(std::size_t, std::size_t,                   \
                                                      std::mt19937_64*, double);                  \
  template Tensor<R> axis_mix(const Tensor<R>&, SpatialAxis, const AxisMixWeights<R>&);           \
  template MixingParams<R> make_mixing_params<R>(const MixingShape&, std::mt19937_64*, double);   \
  template Tensor<R> branch_weights(const MixingParams<R>&);                                      \
  template Tensor<R> token_mixing_forward(const Tensor<R>&, const MixingParams<R>&,               \
                                          const GtmConfig&);

MLP3D_INSTANTIATE_MIXING(float)
MLP3D_INSTANTIATE_MIXING(double)

}  // namespace mlp3d
