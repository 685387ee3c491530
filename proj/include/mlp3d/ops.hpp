#pragma once

// Differentiable tensor operations. All ops allocate a fresh result and,
// when grad recording is on, attach a backward closure.
//
// Axis arguments accept negative values counted from the back.

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mlp3d/tensor.hpp"

namespace mlp3d {

// a[..., M, K] x b[K, N] -> [..., M, N]
template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
// Elementwise product of equal shapes.
template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor);

// x[..., N] + bias[N]
template <class Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& bias);
// x[..., N] * weight[N]
template <class Real>
Tensor<Real> mul_lastdim(const Tensor<Real>& x, const Tensor<Real>& weight);
// x[B, ...] * factor[B]; one scalar per leading index.
template <class Real>
Tensor<Real> mul_leading(const Tensor<Real>& x, const Tensor<Real>& factor);

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape);
// out.shape[i] = x.shape[perm[i]]
template <class Real>
Tensor<Real> permute(const Tensor<Real>& x, const std::vector<std::size_t>& perm);
template <class Real>
Tensor<Real> transpose(const Tensor<Real>& x, int axis_a, int axis_b);

// out[t] = x[(t - k) mod n] along the axis. Gradient is roll by -k.
template <class Real>
Tensor<Real> roll(const Tensor<Real>& x, int axis, long k);

template <class Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, int axis);

// x[i, ...] for leading index i.
template <class Real>
Tensor<Real> select_leading(const Tensor<Real>& x, std::size_t index);

// Assembles a (rows*c) x (cols*c) matrix from c x c tiles.
// layout[r * cols + q] names the tile placed at block (r, q), or -1 for zero.
template <class Real>
Tensor<Real> assemble_blocks(const std::vector<Tensor<Real>>& tiles,
                             const std::vector<int>& layout, std::size_t rows,
                             std::size_t cols);

template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, Real eps = Real(1e-5));

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <class Real>
Tensor<Real> gelu(const Tensor<Real>& x);

template <class Real>
Tensor<Real> softmax(const Tensor<Real>& x, int axis);

// Mean over the listed axes; reduced axes are dropped from the shape.
template <class Real>
Tensor<Real> mean(const Tensor<Real>& x, const std::vector<int>& axes);

template <class Real>
Tensor<Real> sum_all(const Tensor<Real>& x);

// Mean cross-entropy of logits [K] or [B, K] against integer labels.
// With smoothing e the target is (1 - e) onehot + e / K.
template <class Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::span<const std::size_t> labels,
                           Real smoothing = Real(0));

// Overlapping space-time windows of clip[B, H, W, T, Cin].
// Output [B, H', W', T', kh*kw*kt*Cin]; the window is flattened in
// (dh, dw, dt, c) order. Out-of-range reads are zero.
struct WindowGeometry {
  std::array<std::size_t, 3> window{7, 7, 4};
  std::array<std::size_t, 3> stride{4, 4, 4};
  std::array<std::size_t, 3> pad_before{1, 1, 0};
  std::array<std::size_t, 3> pad_after{2, 2, 0};
};
template <class Real>
Tensor<Real> extract_windows(const Tensor<Real>& clip, const WindowGeometry& geom);

// Inverted dropout; identity when p == 0.
template <class Real>
Tensor<Real> dropout(const Tensor<Real>& x, Real p, std::mt19937_64& rng);

}  // namespace mlp3d
