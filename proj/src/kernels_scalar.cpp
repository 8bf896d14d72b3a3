// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#include "covar/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace covar::kern::scalar {

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        T* ci = c + static_cast<std::size_t>(i) * n;
        if (!accumulate)
            std::fill(ci, ci + n, T(0));
        const T* ai = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const T aip = ai[p];
            const T* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j)
                ci[j] += aip * bp[j];
        }
    }
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const T* ai = a + static_cast<std::size_t>(i) * k;
        T* ci = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* bj = b + static_cast<std::size_t>(j) * k;
            T acc = T(0);
            for (int p = 0; p < k; ++p)
                acc += ai[p] * bj[p];
            ci[j] = accumulate ? ci[j] + acc : acc;
        }
    }
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    if (!accumulate)
        std::fill(c, c + static_cast<std::size_t>(m) * n, T(0));
    for (int p = 0; p < k; ++p) {
        const T* ap = a + static_cast<std::size_t>(p) * m;
        const T* bp = b + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const T api = ap[i];
            T* ci = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j)
                ci[j] += api * bp[j];
        }
    }
}

template <typename T>
void vexp(const T* x, T* y, int n) {
    for (int i = 0; i < n; ++i)
        y[i] = std::exp(x[i]);
}

template <typename T>
void vtanh(const T* x, T* y, int n) {
    for (int i = 0; i < n; ++i)
        y[i] = std::tanh(x[i]);
}

namespace {
constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
} // namespace

template <typename T>
void gelu(const T* x, T* y, int n) {
    for (int i = 0; i < n; ++i) {
        const T v = x[i];
        const T u = T(kGeluC) * (v + T(kGeluA) * v * v * v);
        y[i] = T(0.5) * v * (T(1) + std::tanh(u));
    }
}

template <typename T>
void gelu_grad(const T* x, const T* dy, T* dx, int n) {
    for (int i = 0; i < n; ++i) {
        const T v = x[i];
        const T u = T(kGeluC) * (v + T(kGeluA) * v * v * v);
        const T t = std::tanh(u);
        const T du = T(kGeluC) * (T(1) + T(3) * T(kGeluA) * v * v);
        const T g = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
        dx[i] += dy[i] * g;
    }
}

template <typename T>
void axpy(T alpha, const T* x, T* y, int n) {
    for (int i = 0; i < n; ++i)
        y[i] += alpha * x[i];
}

template <typename T>
T sumsq(const T* x, int n) {
    T acc = T(0);
    for (int i = 0; i < n; ++i)
        acc += x[i] * x[i];
    return acc;
}

template <typename T>
void softmax_rows(T* x, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        T* row = x + static_cast<std::size_t>(r) * cols;
        T mx = row[0];
        for (int j = 1; j < cols; ++j)
            mx = std::max(mx, row[j]);
        T sum = T(0);
        for (int j = 0; j < cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const T inv = T(1) / sum;
        for (int j = 0; j < cols; ++j)
            row[j] *= inv;
    }
}

#define COVAR_INSTANTIATE(T)                                                        \
    template void matmul_nn<T>(const T*, const T*, T*, int, int, int, bool);       \
    template void matmul_nt<T>(const T*, const T*, T*, int, int, int, bool);       \
    template void matmul_tn<T>(const T*, const T*, T*, int, int, int, bool);       \
    template void vexp<T>(const T*, T*, int);                                      \
    template void vtanh<T>(const T*, T*, int);                                     \
    template void gelu<T>(const T*, T*, int);                                      \
    template void gelu_grad<T>(const T*, const T*, T*, int);                       \
    template void axpy<T>(T, const T*, T*, int);                                   \
    template T sumsq<T>(const T*, int);                                            \
    template void softmax_rows<T>(T*, int, int);

COVAR_INSTANTIATE(float)
COVAR_INSTANTIATE(double)
#undef COVAR_INSTANTIATE

} // namespace covar::kern::scalar
