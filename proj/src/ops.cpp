#include "mlp3d/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "mlp3d/errors.hpp"
#include "mlp3d/kernels.hpp"

namespace mlp3d {

namespace {

std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <class Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

template <class Real>
using Node = typename Tensor<Real>::Node;

// Parent i's grad buffer, or nullptr when it does not need one.
template <class Real>
Real* parent_grad(Node<Real>& self, std::size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? p->grad_buffer() : nullptr;
}

}  // namespace

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.dim(-1) != b.dim(0)) {
    throw DimensionError("matmul: cannot contract " + shape_string(a.shape()) + " with " +
                         shape_string(b.shape()));
  }
  const std::size_t K = b.dim(0), N = b.dim(1), M = a.numel() / K;
  Shape out_shape = a.shape();
  out_shape.back() = N;
  std::vector<Real> out(M * N);
  kernels::gemm(M, N, K, a.data().data(), b.data().data(), out.data(), false);
  return Tensor<Real>::make_result(
      std::move(out_shape), std::move(out), {a, b}, [M, N, K](Node<Real>& self) {
        const Real* g = self.grad.data();
        const Real* av = self.parents[0]->data.data();
        const Real* bv = self.parents[1]->data.data();
        if (Real* ga = parent_grad<Real>(self, 0)) kernels::gemm_nt_acc(M, N, K, g, bv, ga);
        if (Real* gb = parent_grad<Real>(self, 1)) kernels::gemm_tn_acc(M, N, K, av, g, gb);
      });
}

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor<Real>::make_result(a.shape(), std::move(out), {a, b}, [](Node<Real>& self) {
    const auto n = self.grad.size();
    for (std::size_t p = 0; p < 2; ++p)
      if (Real* g = parent_grad<Real>(self, p))
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
  });
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "sub");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor<Real>::make_result(a.shape(), std::move(out), {a, b}, [](Node<Real>& self) {
    const auto n = self.grad.size();
    if (Real* g = parent_grad<Real>(self, 0))
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    if (Real* g = parent_grad<Real>(self, 1))
      for (std::size_t i = 0; i < n; ++i) g[i] -= self.grad[i];
  });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor<Real>::make_result(a.shape(), std::move(out), {a, b}, [](Node<Real>& self) {
    const auto n = self.grad.size();
    const Real* av = self.parents[0]->data.data();
    const Real* bv = self.parents[1]->data.data();
    if (Real* g = parent_grad<Real>(self, 0))
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * bv[i];
    if (Real* g = parent_grad<Real>(self, 1))
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * av[i];
  });
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor) {
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return Tensor<Real>::make_result(a.shape(), std::move(out), {a}, [factor](Node<Real>& self) {
    if (Real* g = parent_grad<Real>(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <class Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& bias) {
  const std::size_t n = bias.numel();
  if (x.dim(-1) != n) {
    throw DimensionError("add_bias: last extent of " + shape_string(x.shape()) +
                         " does not match bias " + shape_string(bias.shape()));
  }
  std::vector<Real> out(x.data().begin(), x.data().end());
  const Real* b = bias.data().data();
  for (std::size_t r = 0; r < out.size(); r += n)
    for (std::size_t j = 0; j < n; ++j) out[r + j] += b[j];
  return Tensor<Real>::make_result(x.shape(), std::move(out), {x, bias}, [n](Node<Real>& self) {
    const auto total = self.grad.size();
    if (Real* g = parent_grad<Real>(self, 0))
      for (std::size_t i = 0; i < total; ++i) g[i] += self.grad[i];
    if (Real* g = parent_grad<Real>(self, 1))
      for (std::size_t r = 0; r < total; r += n)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r + j];
  });
}

template <class Real>
Tensor<Real> mul_lastdim(const Tensor<Real>& x, const Tensor<Real>& weight) {
  const std::size_t n = weight.numel();
  if (x.dim(-1) != n) {
    throw DimensionError("mul_lastdim: last extent of " + shape_string(x.shape()) +
                         " does not match " + shape_string(weight.shape()));
  }
  std::vector<Real> out(x.numel());
  const Real* xv = x.data().data();
  const Real* w = weight.data().data();
  for (std::size_t r = 0; r < out.size(); r += n)
    for (std::size_t j = 0; j < n; ++j) out[r + j] = xv[r + j] * w[j];
  return Tensor<Real>::make_result(x.shape(), std::move(out), {x, weight}, [n](Node<Real>& self) {
    const auto total = self.grad.size();
    const Real* xv = self.parents[0]->data.data();
    const Real* w = self.parents[1]->data.data();
    if (Real* g = parent_grad<Real>(self, 0))
      for (std::size_t r = 0; r < total; r += n)
        for (std::size_t j = 0; j < n; ++j) g[r + j] += self.grad[r + j] * w[j];
    if (Real* g = parent_grad<Real>(self, 1))
      for (std::size_t r = 0; r < total; r += n)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r + j] * xv[r + j];
  });
}

template <class Real>
Tensor<Real> mul_leading(const Tensor<Real>& x, const Tensor<Real>& factor) {
  const std::size_t b = factor.numel();
  if (x.dim(0) != b) {
    throw DimensionError("mul_leading: leading extent of " + shape_string(x.shape()) +
                         " does not match " + shape_string(factor.shape()));
  }
  const std::size_t per = x.numel() / b;
  std::vector<Real> out(x.numel());
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t i = 0; i < per; ++i) out[s * per + i] = x.data()[s * per + i] * factor.data()[s];
  return Tensor<Real>::make_result(
      x.shape(), std::move(out), {x, factor}, [b, per](Node<Real>& self) {
        const Real* xv = self.parents[0]->data.data();
        const Real* f = self.parents[1]->data.data();
        if (Real* g = parent_grad<Real>(self, 0))
          for (std::size_t s = 0; s < b; ++s)
            for (std::size_t i = 0; i < per; ++i) g[s * per + i] += self.grad[s * per + i] * f[s];
        if (Real* g = parent_grad<Real>(self, 1))
          for (std::size_t s = 0; s < b; ++s)
            for (std::size_t i = 0; i < per; ++i) g[s] += self.grad[s * per + i] * xv[s * per + i];
      });
}

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " +
                         shape_string(shape));
  }
  std::vector<Real> out(x.data().begin(), x.data().end());
  return Tensor<Real>::make_result(std::move(shape), std::move(out), {x}, [](Node<Real>& self) {
    if (Real* g = parent_grad<Real>(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <class Real>
Tensor<Real> permute(const Tensor<Real>& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) {
    throw DimensionError("permute: " + std::to_string(perm.size()) + " axes given for shape " +
                         shape_string(x.shape()));
  }
  std::vector<bool> used(r, false);
  for (auto p : perm) {
    if (p >= r || used[p]) throw DimensionError("permute: invalid axis permutation");
    used[p] = true;
  }
  const Shape& in = x.shape();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i > 0; --i) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out_shape(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in[perm[i]];
    stride[i] = in_stride[perm[i]];
  }
  // source[i] = flat input offset for output element i
  const std::size_t n = x.numel();
  std::vector<std::size_t> source(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    source[i] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out_shape[d]) {
        off += stride[d];
        break;
      }
      off -= stride[d] * (out_shape[d] - 1);
      idx[d] = 0;
    }
  }
  std::vector<Real> out(n);
  const Real* xv = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[source[i]];
  return Tensor<Real>::make_result(std::move(out_shape), std::move(out), {x},
                                   [source = std::move(source)](Node<Real>& self) {
                                     if (Real* g = parent_grad<Real>(self, 0))
                                       for (std::size_t i = 0; i < source.size(); ++i)
                                         g[source[i]] += self.grad[i];
                                   });
}

template <class Real>
Tensor<Real> transpose(const Tensor<Real>& x, int axis_a, int axis_b) {
  std::vector<std::size_t> perm(x.rank());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[norm_axis(axis_a, x.rank())], perm[norm_axis(axis_b, x.rank())]);
  return permute(x, perm);
}

namespace {

template <class Real>
void roll_into(const Real* in, Real* out, const AxisSplit& s, long k, bool accumulate) {
  const long n = static_cast<long>(s.n);
  const long shift = ((k % n) + n) % n;
  for (std::size_t o = 0; o < s.outer; ++o) {
    const Real* src = in + o * s.n * s.inner;
    Real* dst = out + o * s.n * s.inner;
    for (long t = 0; t < n; ++t) {
      const long from = (t - shift + n) % n;
      const Real* a = src + static_cast<std::size_t>(from) * s.inner;
      Real* b = dst + static_cast<std::size_t>(t) * s.inner;
      if (accumulate)
        for (std::size_t i = 0; i < s.inner; ++i) b[i] += a[i];
      else
        std::copy(a, a + s.inner, b);
    }
  }
}

}  // namespace

template <class Real>
Tensor<Real> roll(const Tensor<Real>& x, int axis, long k) {
  const auto ax = norm_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  std::vector<Real> out(x.numel());
  roll_into(x.data().data(), out.data(), s, k, false);
  return Tensor<Real>::make_result(x.shape(), std::move(out), {x}, [s, k](Node<Real>& self) {
    if (Real* g = parent_grad<Real>(self, 0)) roll_into(self.grad.data(), g, s, -k, true);
  });
}

template <class Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const auto ax = norm_axis(axis, parts[0].rank());
  Shape out_shape = parts[0].shape();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    if (a.size() != b.size()) throw DimensionError("concat: rank mismatch");
    a[ax] = b[ax] = 0;
    if (a != b) {
      throw DimensionError("concat: incompatible shapes " + shape_string(parts[0].shape()) +
                           " and " + shape_string(p.shape()));
    }
    widths.push_back(p.dim(static_cast<int>(ax)));
    total += widths.back();
  }
  out_shape[ax] = total;
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<Real> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::size_t w = widths[p] * s.inner;
    const Real* src = parts[p].data().data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy(src + o * w, src + (o + 1) * w, out.data() + o * total * s.inner + offset);
    offset += w;
  }
  return Tensor<Real>::make_result(
      std::move(out_shape), std::move(out), parts, [s, widths, total](Node<Real>& self) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < widths.size(); ++p) {
          const std::size_t w = widths[p] * s.inner;
          if (Real* g = parent_grad<Real>(self, p))
            for (std::size_t o = 0; o < s.outer; ++o)
              for (std::size_t i = 0; i < w; ++i)
                g[o * w + i] += self.grad[o * total * s.inner + offset + i];
          offset += w;
        }
      });
}

template <class Real>
Tensor<Real> select_leading(const Tensor<Real>& x, std::size_t index) {
  if (index >= x.dim(0)) {
    throw DimensionError("select_leading: index " + std::to_string(index) +
                         " out of range for " + shape_string(x.shape()));
  }
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t per = x.numel() / x.dim(0);
  std::vector<Real> out(x.data().begin() + static_cast<long>(index * per),
                        x.data().begin() + static_cast<long>((index + 1) * per));
  return Tensor<Real>::make_result(std::move(out_shape), std::move(out), {x},
                                   [index, per](Node<Real>& self) {
                                     if (Real* g = parent_grad<Real>(self, 0))
                                       for (std::size_t i = 0; i < per; ++i)
                                         g[index * per + i] += self.grad[i];
                                   });
}

template <class Real>
Tensor<Real> assemble_blocks(const std::vector<Tensor<Real>>& tiles,
                             const std::vector<int>& layout, std::size_t rows,
                             std::size_t cols) {
  if (tiles.empty()) throw DimensionError("assemble_blocks: no tiles");
  if (layout.size() != rows * cols) throw DimensionError("assemble_blocks: layout size mismatch");
  const std::size_t c = tiles[0].dim(0);
  for (const auto& t : tiles)
    if (t.rank() != 2 || t.dim(0) != c || t.dim(1) != c)
      throw DimensionError("assemble_blocks: tiles must all be square of extent " +
                           std::to_string(c) + ", got " + shape_string(t.shape()));
  for (int id : layout)
    if (id >= static_cast<int>(tiles.size()))
      throw DimensionError("assemble_blocks: layout names a missing tile");
  const std::size_t width = cols * c;
  std::vector<Real> out(rows * c * width, Real(0));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t q = 0; q < cols; ++q) {
      const int id = layout[r * cols + q];
      if (id < 0) continue;
      const Real* t = tiles[static_cast<std::size_t>(id)].data().data();
      for (std::size_t i = 0; i < c; ++i)
        std::copy(t + i * c, t + (i + 1) * c, out.data() + (r * c + i) * width + q * c);
    }
  return Tensor<Real>::make_result(
      {rows * c, width}, std::move(out), tiles, [layout, rows, cols, c, width](Node<Real>& self) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t q = 0; q < cols; ++q) {
            const int id = layout[r * cols + q];
            if (id < 0) continue;
            Real* g = parent_grad<Real>(self, static_cast<std::size_t>(id));
            if (!g) continue;
            for (std::size_t i = 0; i < c; ++i)
              for (std::size_t j = 0; j < c; ++j)
                g[i * c + j] += self.grad[(r * c + i) * width + q * c + j];
          }
      });
}

template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, Real eps) {
  if (!(eps > Real(0))) throw ParameterError("layer_norm: eps must be positive");
  const std::size_t c = x.dim(-1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("layer_norm: channel extent " + std::to_string(c) +
                         " does not match gamma " + shape_string(gamma.shape()) + " / beta " +
                         shape_string(beta.shape()));
  }
  const std::size_t rows = x.numel() / c;
  std::vector<Real> xhat(x.numel()), rstd(rows), out(x.numel());
  const Real* xv = x.data().data();
  const Real* g = gamma.data().data();
  const Real* b = beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = xv + r * c;
    Real mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<Real>(c);
    Real var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Real>(c);
    const Real rs = Real(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < c; ++j) {
      const Real h = (row[j] - mu) * rs;
      xhat[r * c + j] = h;
      out[r * c + j] = h * g[j] + b[j];
    }
  }
  return Tensor<Real>::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [c, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node<Real>& self) {
        const Real* dy = self.grad.data();
        const Real* g = self.parents[1]->data.data();
        if (Real* dg = parent_grad<Real>(self, 1))
          for (std::size_t i = 0; i < rows * c; ++i) dg[i % c] += dy[i] * xhat[i];
        if (Real* db = parent_grad<Real>(self, 2))
          for (std::size_t i = 0; i < rows * c; ++i) db[i % c] += dy[i];
        if (Real* dx = parent_grad<Real>(self, 0)) {
          for (std::size_t r = 0; r < rows; ++r) {
            Real m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < c; ++j) {
              const Real dh = dy[r * c + j] * g[j];
              m1 += dh;
              m2 += dh * xhat[r * c + j];
            }
            m1 /= static_cast<Real>(c);
            m2 /= static_cast<Real>(c);
            for (std::size_t j = 0; j < c; ++j) {
              const Real dh = dy[r * c + j] * g[j];
              dx[r * c + j] += rstd[r] * (dh - m1 - xhat[r * c + j] * m2);
            }
          }
        }
      });
}

template <class Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
  const Real k = static_cast<Real>(std::sqrt(2.0 / std::numbers::pi));
  const Real a = Real(0.044715);
  std::vector<Real> out(x.numel());
  const Real* xv = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real v = xv[i];
    out[i] = Real(0.5) * v * (Real(1) + std::tanh(k * (v + a * v * v * v)));
  }
  return Tensor<Real>::make_result(x.shape(), std::move(out), {x}, [k, a](Node<Real>& self) {
    Real* g = parent_grad<Real>(self, 0);
    if (!g) return;
    const Real* xv = self.parents[0]->data.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const Real v = xv[i];
      const Real th = std::tanh(k * (v + a * v * v * v));
      const Real d = Real(0.5) * (Real(1) + th) +
                     Real(0.5) * v * (Real(1) - th * th) * k * (Real(1) + Real(3) * a * v * v);
      g[i] += self.grad[i] * d;
    }
  });
}

template <class Real>
Tensor<Real> softmax(const Tensor<Real>& x, int axis) {
  const AxisSplit s = split_at(x.shape(), norm_axis(axis, x.rank()));
  std::vector<Real> out(x.numel());
  const Real* xv = x.data().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      Real mx = xv[base];
      for (std::size_t t = 1; t < s.n; ++t) mx = std::max(mx, xv[base + t * s.inner]);
      Real z = 0;
      for (std::size_t t = 0; t < s.n; ++t) {
        const Real e = std::exp(xv[base + t * s.inner] - mx);
        out[base + t * s.inner] = e;
        z += e;
      }
      for (std::size_t t = 0; t < s.n; ++t) out[base + t * s.inner] /= z;
    }
  auto y = out;
  return Tensor<Real>::make_result(
      x.shape(), std::move(out), {x}, [s, y = std::move(y)](Node<Real>& self) {
        Real* g = parent_grad<Real>(self, 0);
        if (!g) return;
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.n * s.inner + i;
            Real dot = 0;
            for (std::size_t t = 0; t < s.n; ++t)
              dot += self.grad[base + t * s.inner] * y[base + t * s.inner];
            for (std::size_t t = 0; t < s.n; ++t) {
              const std::size_t at = base + t * s.inner;
              g[at] += y[at] * (self.grad[at] - dot);
            }
          }
      });
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& x, const std::vector<int>& axes) {
  if (axes.empty()) throw ParameterError("mean: empty axes list");
  const std::size_t r = x.rank();
  std::vector<bool> reduced(r, false);
  for (int a : axes) reduced[norm_axis(a, r)] = true;
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t d = 0; d < r; ++d) {
    if (reduced[d])
      count *= x.shape()[d];
    else
      out_shape.push_back(x.shape()[d]);
  }
  // Output stride per input axis (0 on reduced axes).
  std::vector<std::size_t> ostride(r, 0);
  std::size_t acc = 1;
  for (std::size_t d = r; d-- > 0;) {
    if (!reduced[d]) {
      ostride[d] = acc;
      acc *= x.shape()[d];
    }
  }
  const std::size_t n = x.numel();
  std::vector<std::size_t> target(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    target[i] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < x.shape()[d]) {
        off += ostride[d];
        break;
      }
      off -= ostride[d] * (x.shape()[d] - 1);
      idx[d] = 0;
    }
  }
  std::vector<Real> out(std::max<std::size_t>(acc, 1), Real(0));
  const Real* xv = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out[target[i]] += xv[i];
  const Real inv = Real(1) / static_cast<Real>(count);
  for (auto& v : out) v *= inv;
  return Tensor<Real>::make_result(std::move(out_shape), std::move(out), {x},
                                   [inv, target = std::move(target)](Node<Real>& self) {
                                     if (Real* g = parent_grad<Real>(self, 0))
                                       for (std::size_t i = 0; i < target.size(); ++i)
                                         g[i] += self.grad[target[i]] * inv;
                                   });
}

template <class Real>
Tensor<Real> sum_all(const Tensor<Real>& x) {
  Real s = 0;
  for (Real v : x.data()) s += v;
  return Tensor<Real>::make_result({1}, {s}, {x}, [](Node<Real>& self) {
    if (Real* g = parent_grad<Real>(self, 0)) {
      const auto n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

template <class Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::span<const std::size_t> labels,
                           Real smoothing) {
  if (logits.rank() > 2) {
    throw DimensionError("cross_entropy: logits must be [K] or [B,K], got " +
                         shape_string(logits.shape()));
  }
  const std::size_t K = logits.dim(-1);
  const std::size_t B = logits.numel() / K;
  if (labels.size() != B) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(B) + " rows");
  }
  if (smoothing < Real(0) || smoothing >= Real(1))
    throw ParameterError("cross_entropy: smoothing must lie in [0,1)");
  std::vector<Real> prob(B * K), target(B * K);
  Real loss = 0;
  const Real* z = logits.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] >= K) {
      throw ParameterError("cross_entropy: label " + std::to_string(labels[b]) +
                           " out of range for " + std::to_string(K) + " classes");
    }
    const Real* row = z + b * K;
    Real mx = row[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    Real sum = 0;
    for (std::size_t k = 0; k < K; ++k) sum += std::exp(row[k] - mx);
    const Real lse = mx + std::log(sum);
    for (std::size_t k = 0; k < K; ++k) {
      const Real t = (k == labels[b] ? Real(1) - smoothing : Real(0)) +
                     smoothing / static_cast<Real>(K);
      target[b * K + k] = t;
      prob[b * K + k] = std::exp(row[k] - lse);
      loss -= t * (row[k] - lse);
    }
  }
  loss /= static_cast<Real>(B);
  return Tensor<Real>::make_result(
      {1}, {loss}, {logits},
      [B, prob = std::move(prob), target = std::move(target)](Node<Real>& self) {
        Real* g = parent_grad<Real>(self, 0);
        if (!g) return;
        const Real s = self.grad[0] / static_cast<Real>(B);
        for (std::size_t i = 0; i < prob.size(); ++i) g[i] += s * (prob[i] - target[i]);
      });
}

template <class Real>
Tensor<Real> extract_windows(const Tensor<Real>& clip, const WindowGeometry& geom) {
  if (clip.rank() != 5) {
    throw DimensionError("extract_windows: expected [B,H,W,T,C] clip, got " +
                         shape_string(clip.shape()));
  }
  const std::size_t B = clip.dim(0), cin = clip.dim(4);
  std::array<std::size_t, 3> in{clip.dim(1), clip.dim(2), clip.dim(3)};
  std::array<std::size_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    const std::size_t padded = in[a] + geom.pad_before[a] + geom.pad_after[a];
    if (geom.stride[a] == 0 || padded < geom.window[a] ||
        (padded - geom.window[a]) % geom.stride[a] != 0) {
      throw ConfigError("extract_windows: window " + std::to_string(geom.window[a]) +
                        " / stride " + std::to_string(geom.stride[a]) +
                        " does not tile extent " + std::to_string(in[a]));
    }
    out[a] = (padded - geom.window[a]) / geom.stride[a] + 1;
  }
  const std::size_t kh = geom.window[0], kw = geom.window[1], kt = geom.window[2];
  const std::size_t feat = kh * kw * kt * cin;
  const std::size_t tokens = B * out[0] * out[1] * out[2];
  // gather[token * feat + f] = flat clip offset, or npos for padding
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<std::size_t> gather(tokens * feat, npos);
  std::size_t tok = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oh = 0; oh < out[0]; ++oh)
      for (std::size_t ow = 0; ow < out[1]; ++ow)
        for (std::size_t ot = 0; ot < out[2]; ++ot, ++tok) {
          std::size_t f = 0;
          for (std::size_t dh = 0; dh < kh; ++dh) {
            const long h = static_cast<long>(oh * geom.stride[0] + dh) -
                           static_cast<long>(geom.pad_before[0]);
            for (std::size_t dw = 0; dw < kw; ++dw) {
              const long w = static_cast<long>(ow * geom.stride[1] + dw) -
                             static_cast<long>(geom.pad_before[1]);
              for (std::size_t dt = 0; dt < kt; ++dt) {
                const long t = static_cast<long>(ot * geom.stride[2] + dt) -
                               static_cast<long>(geom.pad_before[2]);
                const bool inside = h >= 0 && w >= 0 && t >= 0 &&
                                    h < static_cast<long>(in[0]) &&
                                    w < static_cast<long>(in[1]) && t < static_cast<long>(in[2]);
                for (std::size_t c = 0; c < cin; ++c, ++f) {
                  if (!inside) continue;
                  gather[tok * feat + f] =
                      (((b * in[0] + static_cast<std::size_t>(h)) * in[1] +
                        static_cast<std::size_t>(w)) * in[2] + static_cast<std::size_t>(t)) * cin + c;
                }
              }
            }
          }
        }
  std::vector<Real> values(tokens * feat, Real(0));
  const Real* src = clip.data().data();
  for (std::size_t i = 0; i < values.size(); ++i)
    if (gather[i] != npos) values[i] = src[gather[i]];
  return Tensor<Real>::make_result({B, out[0], out[1], out[2], feat}, std::move(values), {clip},
                                   [gather = std::move(gather)](Node<Real>& self) {
                                     Real* g = parent_grad<Real>(self, 0);
                                     if (!g) return;
                                     for (std::size_t i = 0; i < gather.size(); ++i)
                                       if (gather[i] != npos) g[gather[i]] += self.grad[i];
                                   });
}

template <class Real>
Tensor<Real> dropout(const Tensor<Real>& x, Real p, std::mt19937_64& rng) {
  if (p < Real(0) || p >= Real(1)) throw ParameterError("dropout: rate must lie in [0,1)");
  if (p == Real(0)) return x;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  const Real s = Real(1) / (Real(1) - p);
  std::vector<Real> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? s : Real(0);
  return mul(x, Tensor<Real>::from(x.shape(), std::move(mask)));
}

#define MLP3D_INSTANTIATE_OPS(R)                                                                 \
  template Tensor<R> matmul(const Tensor<R>&, const Tensor<R>&);                                 \
  template Tensor<R> add(const Tensor<R>&, const Tensor<R>&);                                    \
  template Tensor<R> sub(const Tensor<R>&, const Tensor<R>&);                                    \
  template Tensor<R> mul(const Tensor<R>&, const Tensor<R>&);                                    \
  template Tensor<R> scale(const Tensor<R>&, R);                                                 \
  template Tensor<R> add_bias(const Tensor<R>&, const Tensor<R>&);                               \
  template Tensor<R> mul_lastdim(const Tensor<R>&, const Tensor<R>&);                            \
  template Tensor<R> mul_leading(const Tensor<R>&, const Tensor<R>&);                            \
  template Tensor<R> reshape(const Tensor<R>&, Shape);                                           \
  template Tensor<R> permute(const Tensor<R>&, const std::vector<std::size_t>&);                 \
  template Tensor<R> transpose(const Tensor<R>&, int, int);                                      \
  template Tensor<R> roll(const Tensor<R>&, int, long);                                          \
  template Tensor<R> concat(const std::vector<Tensor<R>>&, int);                                 \
  template Tensor<R> select_leading(const Tensor<R>&, std::size_t);                              \
  template Tensor<R> assemble_blocks(const std::vector<Tensor<R>>&, const std::vector<int>&,     \
                                     std::size_t, std::size_t);                                  \
  template Tensor<R> layer_norm(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&, R);        \
  template Tensor<R> gelu(const Tensor<R>&);                                                     \
  template Tensor<R> softmax(const Tensor<R>&, int);                                             \
  template Tensor<R> mean(const Tensor<R>&, const std::vector<int>&);                            \
  template Tensor<R> sum_all(const Tensor<R>&);                                                  \
  template Tensor<R> cross_entropy(const Tensor<R>&, std::span<const std::size_t>, R);           \
  template Tensor<R> extract_windows(const Tensor<R>&, const WindowGeometry&);                   \
  template Tensor<R> dropout(const Tensor<R>&, R, std::mt19937_64&);

MLP3D_INSTANTIATE_OPS(float)
MLP3D_INSTANTIATE_OPS(double)

}  // namespace mlp3d
