// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

// Arithmetic inner loops used by the model and trainer. Every kernel has a
// scalar reference implementation; hot float paths have AVX2 variants that
// are selected once at startup (override with COVAR_KERNELS=scalar|avx2).
// Double-precision calls always take the scalar path.
//
// Matrices are dense row-major with no padding.

namespace covar::kern {

enum class Isa { Scalar, Avx2 };

// ISA actually in use for float kernels.
Isa active();
const char* isa_name(Isa isa);

// C[M,N] = A[M,K] * B[K,N]          (accumulate: C +=)
void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
// C[M,N] = A[M,K] * B[N,K]^T
void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
// C[M,N] = A[K,M]^T * B[K,N]
void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);

// y[i] = exp(x[i])
void vexp(const float* x, float* y, int n);
void vexp(const double* x, double* y, int n);

// y[i] = tanh(x[i])
void vtanh(const float* x, float* y, int n);
void vtanh(const double* x, double* y, int n);

// Tanh-approximation GELU, forward and d/dx. The same formula is used at
// both precisions so finite-difference checks see one function.
void gelu(const float* x, float* y, int n);
void gelu(const double* x, double* y, int n);
void gelu_grad(const float* x, const float* dy, float* dx, int n); // dx += dy * gelu'(x)
void gelu_grad(const double* x, const double* dy, double* dx, int n);

// y += alpha * x
void axpy(float alpha, const float* x, float* y, int n);
void axpy(double alpha, const double* x, double* y, int n);

// sum of squares
float sumsq(const float* x, int n);
double sumsq(const double* x, int n);

// In-place row-wise softmax over a [rows, cols] matrix.
void softmax_rows(float* x, int rows, int cols);
void softmax_rows(double* x, int rows, int cols);

namespace scalar {
// Reference implementations, exposed for equivalence tests.
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate);
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate);
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate);
template <typename T>
void vexp(const T* x, T* y, int n);
template <typename T>
void vtanh(const T* x, T* y, int n);
template <typename T>
void gelu(const T* x, T* y, int n);
template <typename T>
void gelu_grad(const T* x, const T* dy, T* dx, int n);
template <typename T>
void axpy(T alpha, const T* x, T* y, int n);
template <typename T>
T sumsq(const T* x, int n);
template <typename T>
void softmax_rows(T* x, int rows, int cols);
} // namespace scalar

#ifdef __AVX2__
#define COVAR_KERN_DECLARE_AVX2 1
#endif

namespace avx2 {
// Compiled only when the toolchain supports AVX2; guarded by dispatch.
bool available();
void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
void vexp(const float* x, float* y, int n);
void vtanh(const float* x, float* y, int n);
void gelu(const float* x, float* y, int n);
void gelu_grad(const float* x, const float* dy, float* dx, int n);
void axpy(float alpha, const float* x, float* y, int n);
float sumsq(const float* x, int n);
void softmax_rows(float* x, int rows, int cols);
} // namespace avx2

} // namespace covar::kern
