#include "mlp3d/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mlp3d::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

int initial_threads() {
  if (const char* env = std::getenv("MLP3D_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

int& thread_cap() {
  static int cap = initial_threads();
  return cap;
}

}  // namespace

void set_num_threads(int n) { thread_cap() = std::max(1, n); }
int num_threads() { return thread_cap(); }

template <class Real>
void gemm(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B, Real* C,
          bool accumulate) {
  const long rows = static_cast<long>(M);
  const bool par = thread_cap() > 1 && M * N * K >= kParallelWork;
#pragma omp parallel for schedule(static) num_threads(thread_cap()) if (par)
  for (long i = 0; i < rows; ++i) {
    Real* c = C + static_cast<std::size_t>(i) * N;
    if (!accumulate) std::fill(c, c + N, Real(0));
    const Real* a = A + static_cast<std::size_t>(i) * K;
    for (std::size_t k = 0; k < K; ++k) {
      const Real aik = a[k];
      const Real* b = B + k * N;
#pragma omp simd
      for (std::size_t j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

template <class Real>
void gemm_tn_acc(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B,
                 Real* C) {
  const long outs = static_cast<long>(K);
  const bool par = thread_cap() > 1 && M * N * K >= kParallelWork;
#pragma omp parallel for schedule(static) num_threads(thread_cap()) if (par)
  for (long k = 0; k < outs; ++k) {
    Real* c = C + static_cast<std::size_t>(k) * N;
    for (std::size_t i = 0; i < M; ++i) {
      const Real aik = A[i * K + static_cast<std::size_t>(k)];
      if (aik == Real(0)) continue;
      const Real* b = B + i * N;
#pragma omp simd
      for (std::size_t j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

template <class Real>
void gemm_nt_acc(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B,
                 Real* C) {
  // Transposing B turns the dot-product form into the streaming i-j-k form.
  std::vector<Real> bt(N * K);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < N; ++j) bt[j * K + k] = B[k * N + j];
  const long rows = static_cast<long>(M);
  const bool par = thread_cap() > 1 && M * N * K >= kParallelWork;
#pragma omp parallel for schedule(static) num_threads(thread_cap()) if (par)
  for (long i = 0; i < rows; ++i) {
    Real* c = C + static_cast<std::size_t>(i) * K;
    const Real* a = A + static_cast<std::size_t>(i) * N;
    for (std::size_t j = 0; j < N; ++j) {
      const Real aij = a[j];
      const Real* b = bt.data() + j * K;
#pragma omp simd
      for (std::size_t k = 0; k < K; ++k) c[k] += aij * b[k];
    }
  }
}

namespace serial {

template <class Real>
void gemm(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B, Real* C,
          bool accumulate) {
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      Real& c = C[i * N + j];
      if (!accumulate) c = Real(0);
      for (std::size_t k = 0; k < K; ++k) c += A[i * K + k] * B[k * N + j];
    }
}

template <class Real>
void gemm_tn_acc(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B,
                 Real* C) {
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < N; ++j) {
      Real& c = C[k * N + j];
      for (std::size_t i = 0; i < M; ++i) {
        const Real aik = A[i * K + k];
        if (aik == Real(0)) continue;
        c += aik * B[i * N + j];
      }
    }
}

template <class Real>
void gemm_nt_acc(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B,
                 Real* C) {
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      Real& c = C[i * K + k];
      for (std::size_t j = 0; j < N; ++j) c += A[i * N + j] * B[k * N + j];
    }
}

}  // namespace serial

#define MLP3D_INSTANTIATE_KERNELS(R)                                                          \
  template void gemm<R>(std::size_t, std::size_t, std::size_t, const R*, const R*, R*, bool); \
  template void gemm_tn_acc<R>(std::size_t, std::size_t, std::size_t, const R*, const R*, R*); \
  template void gemm_nt_acc<R>(std::size_t, std::size_t, std::size_t, const R*, const R*, R*); \
  template void serial::gemm<R>(std::size_t, std::size_t, std::size_t, const R*, const R*, R*, \
                                bool);                                                        \
  template void serial::gemm_tn_acc<R>(std::size_t, std::size_t, std::size_t, const R*,       \
                                       const R*, R*);                                         \
  template void serial::gemm_nt_acc<R>(std::size_t, std::size_t, std::size_t, const R*,       \
                                       const R*, R*);

MLP3D_INSTANTIATE_KERNELS(float)
MLP3D_INSTANTIATE_KERNELS(double)

}  // namespace mlp3d::kernels
