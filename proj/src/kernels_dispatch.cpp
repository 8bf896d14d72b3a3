// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#include "covar/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace covar::kern {

#ifndef COVAR_BUILD_AVX2
namespace avx2 {
// Toolchain without AVX2 support: stubs keep the dispatcher simple.
bool available() { return false; }
void matmul_nn(const float*, const float*, float*, int, int, int, bool) {}
void matmul_nt(const float*, const float*, float*, int, int, int, bool) {}
void matmul_tn(const float*, const float*, float*, int, int, int, bool) {}
void vexp(const float*, float*, int) {}
void vtanh(const float*, float*, int) {}
void gelu(const float*, float*, int) {}
void gelu_grad(const float*, const float*, float*, int) {}
void axpy(float, const float*, float*, int) {}
float sumsq(const float*, int) { return 0.0f; }
void softmax_rows(float*, int, int) {}
} // namespace avx2
#endif

namespace {

Isa pick_isa() {
    if (const char* env = std::getenv("COVAR_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0)
            return Isa::Scalar;
        if (std::strcmp(env, "avx2") == 0 && avx2::available())
            return Isa::Avx2;
        return Isa::Scalar;
    }
    return avx2::available() ? Isa::Avx2 : Isa::Scalar;
}

const Isa g_isa = pick_isa();

} // namespace

Isa active() { return g_isa; }

const char* isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
    if (g_isa == Isa::Avx2)
        avx2::matmul_nn(a, b, c, m, k, n, acc);
    else
        scalar::matmul_nn(a, b, c, m, k, n, acc);
}
void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
    if (g_isa == Isa::Avx2)
        avx2::matmul_nt(a, b, c, m, k, n, acc);
    else
        scalar::matmul_nt(a, b, c, m, k, n, acc);
}
void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
    if (g_isa == Isa::Avx2)
        avx2::matmul_tn(a, b, c, m, k, n, acc);
    else
        scalar::matmul_tn(a, b, c, m, k, n, acc);
}
void vexp(const float* x, float* y, int n) {
    if (g_isa == Isa::Avx2)
        avx2::vexp(x, y, n);
    else
        scalar::vexp(x, y, n);
}
void vtanh(const float* x, float* y, int n) {
    if (g_isa == Isa::Avx2)
        avx2::vtanh(x, y, n);
    else
        scalar::vtanh(x, y, n);
}
void gelu(const float* x, float* y, int n) {
    if (g_isa == Isa::Avx2)
        avx2::gelu(x, y, n);
    else
        scalar::gelu(x, y, n);
}
void gelu_grad(const float* x, const float* dy, float* dx, int n) {
    if (g_isa == Isa::Avx2)
        avx2::gelu_grad(x, dy, dx, n);
    else
        scalar::gelu_grad(x, dy, dx, n);
}
void axpy(float alpha, const float* x, float* y, int n) {
    if (g_isa == Isa::Avx2)
        avx2::axpy(alpha, x, y, n);
    else
        scalar::axpy(alpha, x, y, n);
}
float sumsq(const float* x, int n) {
    return g_isa == Isa::Avx2 ? avx2::sumsq(x, n) : scalar::sumsq(x, n);
}
void softmax_rows(float* x, int rows, int cols) {
    if (g_isa == Isa::Avx2)
        avx2::softmax_rows(x, rows, cols);
    else
        scalar::softmax_rows(x, rows, cols);
}

// Double precision is used by finite-difference checks only; always scalar.
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    scalar::matmul_nn(a, b, c, m, k, n, acc);
}
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    scalar::matmul_nt(a, b, c, m, k, n, acc);
}
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    scalar::matmul_tn(a, b, c, m, k, n, acc);
}
void vexp(const double* x, double* y, int n) { scalar::vexp(x, y, n); }
void vtanh(const double* x, double* y, int n) { scalar::vtanh(x, y, n); }
void gelu(const double* x, double* y, int n) { scalar::gelu(x, y, n); }
void gelu_grad(const double* x, const double* dy, double* dx, int n) {
    scalar::gelu_grad(x, dy, dx, n);
}
void axpy(double alpha, const double* x, double* y, int n) { scalar::axpy(alpha, x, y, n); }
double sumsq(const double* x, int n) { return scalar::sumsq(x, n); }
void softmax_rows(double* x, int rows, int cols) { scalar::softmax_rows(x, rows, cols); }

} // namespace covar::kern
