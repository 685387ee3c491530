#pragma once

// Row-major GEMM kernels behind every linear map in the model.
//
// The default entry points are OpenMP-parallel over output rows. The
// serial:: variants are plain loop nests kept as the reference for tests
// and benchmarks. Both accumulate each output element in the same order,
// so with floating-point contraction disabled they agree bitwise.

#include <cstddef>

namespace mlp3d::kernels {

// C[M,N] = A[M,K] * B[K,N]   (or += when accumulate)
template <class Real>
void gemm(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B, Real* C,
          bool accumulate);

// C[K,N] += A[M,K]^T * B[M,N]
template <class Real>
void gemm_tn_acc(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B,
                 Real* C);

// C[M,K] += A[M,N] * B[K,N]^T
template <class Real>
void gemm_nt_acc(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B,
                 Real* C);

namespace serial {

template <class Real>
void gemm(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B, Real* C,
          bool accumulate);

template <class Real>
void gemm_tn_acc(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B,
                 Real* C);

template <class Real>
void gemm_nt_acc(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B,
                 Real* C);

}  // namespace serial

// Worker cap for the parallel kernels. Defaults to MLP3D_THREADS from the
// environment, else 1.
void set_num_threads(int n);
int num_threads();

}  // namespace mlp3d::kernels
