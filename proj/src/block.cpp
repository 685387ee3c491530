#include "mlp3d/block.hpp"

#include "mlp3d/errors.hpp"
#include "mlp3d/init.hpp"
#include "mlp3d/ops.hpp"

namespace mlp3d {

template <class Real>
std::vector<NamedTensor<Real>> BlockParams<Real>::named_parameters(
    const std::string& prefix) const {
  std::vector<NamedTensor<Real>> out;
  out.push_back({prefix + ".ln1.gamma", ln1_gamma});
  out.push_back({prefix + ".ln1.beta", ln1_beta});
  for (auto& p : mixing.named_parameters(prefix + ".mixing")) out.push_back(std::move(p));
  out.push_back({prefix + ".ln2.gamma", ln2_gamma});
  out.push_back({prefix + ".ln2.beta", ln2_beta});
  out.push_back({prefix + ".mlp.fc1.weight", fc1_weight});
  out.push_back({prefix + ".mlp.fc1.bias", fc1_bias});
  out.push_back({prefix + ".mlp.fc2.weight", fc2_weight});
  out.push_back({prefix + ".mlp.fc2.bias", fc2_bias});
  return out;
}

template <class Real>
std::size_t BlockParams<Real>::scalar_count() const {
  return ln1_gamma.numel() + ln1_beta.numel() + mixing.scalar_count() + ln2_gamma.numel() +
         ln2_beta.numel() + fc1_weight.numel() + fc1_bias.numel() + fc2_weight.numel() +
         fc2_bias.numel();
}

template <class Real>
BlockParams<Real> make_block_params(const BlockShape& shape, std::mt19937_64* rng,
                                    double stddev) {
  if (shape.mlp_ratio < 1) throw ConfigError("MLP expansion ratio must be at least 1");
  if (shape.drop_path_rate < 0.0 || shape.drop_path_rate >= 1.0)
    throw ConfigError("drop-path rate must lie in [0, 1)");
  const std::size_t c = shape.mixing.channels, hidden = shape.mlp_ratio * c;
  BlockParams<Real> p;
  p.ln1_gamma = init_constant<Real>({c}, Real(1));
  p.ln1_beta = init_constant<Real>({c}, Real(0));
  p.mixing = make_mixing_params<Real>(shape.mixing, rng, stddev);
  p.ln2_gamma = init_constant<Real>({c}, Real(1));
  p.ln2_beta = init_constant<Real>({c}, Real(0));
  p.fc1_weight = init_weight<Real>({c, hidden}, rng, stddev);
  p.fc1_bias = init_constant<Real>({hidden}, Real(0));
  p.fc2_weight = init_weight<Real>({hidden, c}, rng, stddev);
  p.fc2_bias = init_constant<Real>({c}, Real(0));
  p.drop_path_rate = shape.drop_path_rate;
  return p;
}

template <class Real>
Tensor<Real> channel_mlp_forward(const Tensor<Real>& x, const BlockParams<Real>& params) {
  if (x.dim(-1) != params.fc1_weight.dim(0)) {
    throw DimensionError("channel MLP: tokens " + shape_string(x.shape()) +
                         " do not match fc1 " + shape_string(params.fc1_weight.shape()));
  }
  const Tensor<Real> h = gelu(add_bias(matmul(x, params.fc1_weight), params.fc1_bias));
  return add_bias(matmul(h, params.fc2_weight), params.fc2_bias);
}

namespace {

template <class Real>
Tensor<Real> drop_path(const Tensor<Real>& branch, double rate, std::mt19937_64& rng) {
  const std::size_t samples = branch.rank() == 5 ? branch.dim(0) : 1;
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<Real> factor(samples);
  for (auto& f : factor) f = keep(rng) ? static_cast<Real>(1.0 / (1.0 - rate)) : Real(0);
  const Tensor<Real> flat = reshape(branch, {samples, branch.numel() / samples});
  return reshape(mul_leading(flat, Tensor<Real>::from({samples}, std::move(factor))),
                 branch.shape());
}

}  // namespace

template <class Real>
Tensor<Real> block_forward(const Tensor<Real>& x, const BlockParams<Real>& params,
                           const GtmConfig& time_config, bool training, std::mt19937_64* rng) {
  const bool drop = training && params.drop_path_rate > 0.0;
  if (drop && rng == nullptr) throw ParameterError("block_forward: drop path needs a random stream");

  Tensor<Real> mixed = token_mixing_forward(layer_norm(x, params.ln1_gamma, params.ln1_beta),
                                            params.mixing, time_config);
  if (drop) mixed = drop_path(mixed, params.drop_path_rate, *rng);
  const Tensor<Real> y = add(x, mixed);

  Tensor<Real> mlp = channel_mlp_forward(layer_norm(y, params.ln2_gamma, params.ln2_beta), params);
  if (drop) mlp = drop_path(mlp, params.drop_path_rate, *rng);
  return add(y, mlp);
}

#define MLP3D_INSTANTIATE_BLOCK(R)                                                       \
  template struct BlockParams<R>;                                                        \
  template BlockParams<R> make_block_params<R>(const BlockShape&, std::mt19937_64*, double); \
  template Tensor<R> channel_mlp_forward(const Tensor<R>&, const BlockParams<R>&);       \
  template Tensor<R> block_forward(const Tensor<R>&, const BlockParams<R>&, const GtmConfig&, \
                                   bool, std::mt19937_64*);

MLP3D_INSTANTIATE_BLOCK(float)
MLP3D_INSTANTIATE_BLOCK(double)

}  // namespace mlp3d
