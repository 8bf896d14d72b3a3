// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#include "covar/kernels.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

// AVX2+FMA float kernels. Compiled in its own TU with -mavx2 -mfma; only
// reached through the dispatcher after a cpuid check.

namespace covar::kern::avx2 {

bool available() {
#if defined(__GNUC__) || defined(__clang__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

// Cephes-style single-precision exp, |rel err| < 2 ulp on the clamped range.
inline __m256 exp_ps(__m256 x) {
    const __m256 one = _mm256_set1_ps(1.0f);
    x = _mm256_min_ps(x, _mm256_set1_ps(88.3762626647950f));
    x = _mm256_max_ps(x, _mm256_set1_ps(-88.3762626647949f));

    __m256 fx = _mm256_mul_ps(x, _mm256_set1_ps(1.44269504088896341f));
    fx = _mm256_add_ps(fx, _mm256_set1_ps(0.5f));
    __m256 flr = _mm256_floor_ps(fx);
    __m256 mask = _mm256_cmp_ps(flr, fx, _CMP_GT_OS);
    mask = _mm256_and_ps(mask, one);
    fx = _mm256_sub_ps(flr, mask);

    __m256 tmp = _mm256_mul_ps(fx, _mm256_set1_ps(0.693359375f));
    __m256 z = _mm256_mul_ps(fx, _mm256_set1_ps(-2.12194440e-4f));
    x = _mm256_sub_ps(x, tmp);
    x = _mm256_sub_ps(x, z);
    z = _mm256_mul_ps(x, x);

    __m256 y = _mm256_set1_ps(1.9875691500e-4f);
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
    y = _mm256_fmadd_ps(y, z, x);
    y = _mm256_add_ps(y, one);

    __m256i imm = _mm256_cvttps_epi32(fx);
    imm = _mm256_add_epi32(imm, _mm256_set1_epi32(0x7f));
    imm = _mm256_slli_epi32(imm, 23);
    return _mm256_mul_ps(y, _mm256_castsi256_ps(imm));
}

// tanh(x) = 1 - 2 / (exp(2x) + 1); saturation handled by the exp clamp.
inline __m256 tanh_ps(__m256 x) {
    const __m256 one = _mm256_set1_ps(1.0f);
    const __m256 two = _mm256_set1_ps(2.0f);
    __m256 e = exp_ps(_mm256_mul_ps(x, two));
    return _mm256_sub_ps(one, _mm256_div_ps(two, _mm256_add_ps(e, one)));
}

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_hadd_ps(lo, lo);
    lo = _mm_hadd_ps(lo, lo);
    return _mm_cvtss_f32(lo);
}

constexpr float kGeluC = 0.7978845608028654f;
constexpr float kGeluA = 0.044715f;

} // namespace

void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    int j = 0;
    for (; j + 16 <= n; j += 16) {
        int i = 0;
        // 6x16 register block: 12 accumulators + 2 B vectors + 1 broadcast
        for (; i + 6 <= m; i += 6) {
            __m256 acc[6][2];
            for (int r = 0; r < 6; ++r) {
                if (accumulate) {
                    acc[r][0] = _mm256_loadu_ps(c + (std::size_t)(i + r) * n + j);
                    acc[r][1] = _mm256_loadu_ps(c + (std::size_t)(i + r) * n + j + 8);
                } else {
                    acc[r][0] = acc[r][1] = _mm256_setzero_ps();
                }
            }
            for (int p = 0; p < k; ++p) {
                const __m256 b0 = _mm256_loadu_ps(b + (std::size_t)p * n + j);
                const __m256 b1 = _mm256_loadu_ps(b + (std::size_t)p * n + j + 8);
                for (int r = 0; r < 6; ++r) {
                    const __m256 av = _mm256_broadcast_ss(a + (std::size_t)(i + r) * k + p);
                    acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
                    acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
                }
            }
            for (int r = 0; r < 6; ++r) {
                _mm256_storeu_ps(c + (std::size_t)(i + r) * n + j, acc[r][0]);
                _mm256_storeu_ps(c + (std::size_t)(i + r) * n + j + 8, acc[r][1]);
            }
        }
        for (; i < m; ++i) {
            __m256 c0, c1;
            if (accumulate) {
                c0 = _mm256_loadu_ps(c + (std::size_t)i * n + j);
                c1 = _mm256_loadu_ps(c + (std::size_t)i * n + j + 8);
            } else {
                c0 = c1 = _mm256_setzero_ps();
            }
            for (int p = 0; p < k; ++p) {
                const __m256 av = _mm256_broadcast_ss(a + (std::size_t)i * k + p);
                c0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b + (std::size_t)p * n + j), c0);
                c1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b + (std::size_t)p * n + j + 8), c1);
            }
            _mm256_storeu_ps(c + (std::size_t)i * n + j, c0);
            _mm256_storeu_ps(c + (std::size_t)i * n + j + 8, c1);
        }
    }
    if (j < n) {
        // column tail
        for (int i = 0; i < m; ++i) {
            float* ci = c + (std::size_t)i * n;
            if (!accumulate)
                for (int jj = j; jj < n; ++jj)
                    ci[jj] = 0.0f;
            const float* ai = a + (std::size_t)i * k;
            for (int p = 0; p < k; ++p) {
                const float aip = ai[p];
                const float* bp = b + (std::size_t)p * n;
                for (int jj = j; jj < n; ++jj)
                    ci[jj] += aip * bp[jj];
            }
        }
    }
}

namespace {

// 8x8 in-register transpose of src (rows stride ss) into dst (stride ds).
inline void transpose8x8(const float* src, std::size_t ss, float* dst, std::size_t ds) {
    __m256 r0 = _mm256_loadu_ps(src + 0 * ss);
    __m256 r1 = _mm256_loadu_ps(src + 1 * ss);
    __m256 r2 = _mm256_loadu_ps(src + 2 * ss);
    __m256 r3 = _mm256_loadu_ps(src + 3 * ss);
    __m256 r4 = _mm256_loadu_ps(src + 4 * ss);
    __m256 r5 = _mm256_loadu_ps(src + 5 * ss);
    __m256 r6 = _mm256_loadu_ps(src + 6 * ss);
    __m256 r7 = _mm256_loadu_ps(src + 7 * ss);
    __m256 t0 = _mm256_unpacklo_ps(r0, r1);
    __m256 t1 = _mm256_unpackhi_ps(r0, r1);
    __m256 t2 = _mm256_unpacklo_ps(r2, r3);
    __m256 t3 = _mm256_unpackhi_ps(r2, r3);
    __m256 t4 = _mm256_unpacklo_ps(r4, r5);
    __m256 t5 = _mm256_unpackhi_ps(r4, r5);
    __m256 t6 = _mm256_unpacklo_ps(r6, r7);
    __m256 t7 = _mm256_unpackhi_ps(r6, r7);
    __m256 s0 = _mm256_shuffle_ps(t0, t2, 0x44);
    __m256 s1 = _mm256_shuffle_ps(t0, t2, 0xEE);
    __m256 s2 = _mm256_shuffle_ps(t1, t3, 0x44);
    __m256 s3 = _mm256_shuffle_ps(t1, t3, 0xEE);
    __m256 s4 = _mm256_shuffle_ps(t4, t6, 0x44);
    __m256 s5 = _mm256_shuffle_ps(t4, t6, 0xEE);
    __m256 s6 = _mm256_shuffle_ps(t5, t7, 0x44);
    __m256 s7 = _mm256_shuffle_ps(t5, t7, 0xEE);
    _mm256_storeu_ps(dst + 0 * ds, _mm256_permute2f128_ps(s0, s4, 0x20));
    _mm256_storeu_ps(dst + 1 * ds, _mm256_permute2f128_ps(s1, s5, 0x20));
    _mm256_storeu_ps(dst + 2 * ds, _mm256_permute2f128_ps(s2, s6, 0x20));
    _mm256_storeu_ps(dst + 3 * ds, _mm256_permute2f128_ps(s3, s7, 0x20));
    _mm256_storeu_ps(dst + 4 * ds, _mm256_permute2f128_ps(s0, s4, 0x31));
    _mm256_storeu_ps(dst + 5 * ds, _mm256_permute2f128_ps(s1, s5, 0x31));
    _mm256_storeu_ps(dst + 6 * ds, _mm256_permute2f128_ps(s2, s6, 0x31));
    _mm256_storeu_ps(dst + 7 * ds, _mm256_permute2f128_ps(s3, s7, 0x31));
}

// src is [rows, cols] row-major; dst becomes [cols, rows].
void transpose(const float* src, float* dst, int rows, int cols) {
    const int r8 = rows & ~7, c8 = cols & ~7;
    for (int i = 0; i < r8; i += 8) {
        for (int j = 0; j < c8; j += 8)
            transpose8x8(src + (std::size_t)i * cols + j, cols,
                         dst + (std::size_t)j * rows + i, rows);
        for (int j = c8; j < cols; ++j)
            for (int r = 0; r < 8; ++r)
                dst[(std::size_t)j * rows + i + r] = src[(std::size_t)(i + r) * cols + j];
    }
    for (int i = r8; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            dst[(std::size_t)j * rows + i] = src[(std::size_t)i * cols + j];
}

} // namespace

void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    // large operands: transpose B once and reuse the blocked nn kernel
    if ((std::size_t)m * n * k >= (std::size_t)1 << 16) {
        thread_local std::vector<float> scratch;
        scratch.resize((std::size_t)k * n);
        transpose(b, scratch.data(), n, k);
        matmul_nn(a, scratch.data(), c, m, k, n, accumulate);
        return;
    }
    const int k8 = k & ~7;
    for (int i = 0; i < m; ++i) {
        const float* ai = a + (std::size_t)i * k;
        float* ci = c + (std::size_t)i * n;
        int j = 0;
        for (; j + 4 <= n; j += 4) {
            __m256 acc0 = _mm256_setzero_ps();
            __m256 acc1 = _mm256_setzero_ps();
            __m256 acc2 = _mm256_setzero_ps();
            __m256 acc3 = _mm256_setzero_ps();
            const float* b0 = b + (std::size_t)(j + 0) * k;
            const float* b1 = b + (std::size_t)(j + 1) * k;
            const float* b2 = b + (std::size_t)(j + 2) * k;
            const float* b3 = b + (std::size_t)(j + 3) * k;
            for (int p = 0; p < k8; p += 8) {
                const __m256 av = _mm256_loadu_ps(ai + p);
                acc0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b0 + p), acc0);
                acc1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b1 + p), acc1);
                acc2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b2 + p), acc2);
                acc3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b3 + p), acc3);
            }
            float s0 = hsum(acc0), s1 = hsum(acc1), s2 = hsum(acc2), s3 = hsum(acc3);
            for (int p = k8; p < k; ++p) {
                const float av = ai[p];
                s0 += av * b0[p];
                s1 += av * b1[p];
                s2 += av * b2[p];
                s3 += av * b3[p];
            }
            if (accumulate) {
                ci[j + 0] += s0;
                ci[j + 1] += s1;
                ci[j + 2] += s2;
                ci[j + 3] += s3;
            } else {
                ci[j + 0] = s0;
                ci[j + 1] = s1;
                ci[j + 2] = s2;
                ci[j + 3] = s3;
            }
        }
        for (; j < n; ++j) {
            const float* bj = b + (std::size_t)j * k;
            __m256 acc = _mm256_setzero_ps();
            for (int p = 0; p < k8; p += 8)
                acc = _mm256_fmadd_ps(_mm256_loadu_ps(ai + p), _mm256_loadu_ps(bj + p), acc);
            float s = hsum(acc);
            for (int p = k8; p < k; ++p)
                s += ai[p] * bj[p];
            ci[j] = accumulate ? ci[j] + s : s;
        }
    }
}

void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    // Same register blocking as matmul_nn; A is read column-wise as
    // a[p*m + i], which stays contiguous across the 6-row block.
    if (n >= 16) {
        int j = 0;
        for (; j + 16 <= n; j += 16) {
            int i = 0;
            for (; i + 6 <= m; i += 6) {
                __m256 acc[6][2];
                for (int r = 0; r < 6; ++r) {
                    if (accumulate) {
                        acc[r][0] = _mm256_loadu_ps(c + (std::size_t)(i + r) * n + j);
                        acc[r][1] = _mm256_loadu_ps(c + (std::size_t)(i + r) * n + j + 8);
                    } else {
                        acc[r][0] = acc[r][1] = _mm256_setzero_ps();
                    }
                }
                for (int p = 0; p < k; ++p) {
                    const __m256 b0 = _mm256_loadu_ps(b + (std::size_t)p * n + j);
                    const __m256 b1 = _mm256_loadu_ps(b + (std::size_t)p * n + j + 8);
                    const float* ap = a + (std::size_t)p * m + i;
                    for (int r = 0; r < 6; ++r) {
                        const __m256 av = _mm256_broadcast_ss(ap + r);
                        acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
                        acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
                    }
                }
                for (int r = 0; r < 6; ++r) {
                    _mm256_storeu_ps(c + (std::size_t)(i + r) * n + j, acc[r][0]);
                    _mm256_storeu_ps(c + (std::size_t)(i + r) * n + j + 8, acc[r][1]);
                }
            }
            for (; i < m; ++i) {
                __m256 c0, c1;
                if (accumulate) {
                    c0 = _mm256_loadu_ps(c + (std::size_t)i * n + j);
                    c1 = _mm256_loadu_ps(c + (std::size_t)i * n + j + 8);
                } else {
                    c0 = c1 = _mm256_setzero_ps();
                }
                for (int p = 0; p < k; ++p) {
                    const __m256 av = _mm256_broadcast_ss(a + (std::size_t)p * m + i);
                    c0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b + (std::size_t)p * n + j), c0);
                    c1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b + (std::size_t)p * n + j + 8), c1);
                }
                _mm256_storeu_ps(c + (std::size_t)i * n + j, c0);
                _mm256_storeu_ps(c + (std::size_t)i * n + j + 8, c1);
            }
        }
        if (j < n) {
            for (int i = 0; i < m; ++i) {
                float* ci = c + (std::size_t)i * n;
                if (!accumulate)
                    for (int jj = j; jj < n; ++jj)
                        ci[jj] = 0.0f;
                for (int p = 0; p < k; ++p) {
                    const float aip = a[(std::size_t)p * m + i];
                    const float* bp = b + (std::size_t)p * n;
                    for (int jj = j; jj < n; ++jj)
                        ci[jj] += aip * bp[jj];
                }
            }
        }
        return;
    }
    if (!accumulate)
        std::fill(c, c + (std::size_t)m * n, 0.0f);
    const int n8 = n & ~7;
    for (int p = 0; p < k; ++p) {
        const float* ap = a + (std::size_t)p * m;
        const float* bp = b + (std::size_t)p * n;
        for (int i = 0; i < m; ++i) {
            const float api = ap[i];
            if (api == 0.0f)
                continue;
            float* ci = c + (std::size_t)i * n;
            const __m256 av = _mm256_set1_ps(api);
            int jj = 0;
            for (; jj < n8; jj += 8) {
                __m256 cv = _mm256_loadu_ps(ci + jj);
                cv = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp + jj), cv);
                _mm256_storeu_ps(ci + jj, cv);
            }
            for (; jj < n; ++jj)
                ci[jj] += api * bp[jj];
        }
    }
}

void vexp(const float* x, float* y, int n) {
    int i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, exp_ps(_mm256_loadu_ps(x + i)));
    for (; i < n; ++i)
        y[i] = std::exp(x[i]);
}

void vtanh(const float* x, float* y, int n) {
    int i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, tanh_ps(_mm256_loadu_ps(x + i)));
    for (; i < n; ++i)
        y[i] = std::tanh(x[i]);
}

void gelu(const float* x, float* y, int n) {
    const __m256 c = _mm256_set1_ps(kGeluC);
    const __m256 aa = _mm256_set1_ps(kGeluA);
    const __m256 half = _mm256_set1_ps(0.5f);
    const __m256 one = _mm256_set1_ps(1.0f);
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_loadu_ps(x + i);
        const __m256 v3 = _mm256_mul_ps(_mm256_mul_ps(v, v), v);
        const __m256 u = _mm256_mul_ps(c, _mm256_fmadd_ps(aa, v3, v));
        const __m256 t = tanh_ps(u);
        _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_mul_ps(half, v), _mm256_add_ps(one, t)));
    }
    if (i < n)
        scalar::gelu(x + i, y + i, n - i);
}

void gelu_grad(const float* x, const float* dy, float* dx, int n) {
    const __m256 c = _mm256_set1_ps(kGeluC);
    const __m256 aa = _mm256_set1_ps(kGeluA);
    const __m256 aa3 = _mm256_set1_ps(3.0f * kGeluA);
    const __m256 half = _mm256_set1_ps(0.5f);
    const __m256 one = _mm256_set1_ps(1.0f);
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_loadu_ps(x + i);
        const __m256 v2 = _mm256_mul_ps(v, v);
        const __m256 u = _mm256_mul_ps(c, _mm256_fmadd_ps(aa, _mm256_mul_ps(v2, v), v));
        const __m256 t = tanh_ps(u);
        const __m256 du = _mm256_mul_ps(c, _mm256_fmadd_ps(aa3, v2, one));
        const __m256 sech2 = _mm256_sub_ps(one, _mm256_mul_ps(t, t));
        __m256 g = _mm256_mul_ps(half, _mm256_add_ps(one, t));
        g = _mm256_fmadd_ps(_mm256_mul_ps(_mm256_mul_ps(half, v), sech2), du, g);
        __m256 d = _mm256_loadu_ps(dx + i);
        d = _mm256_fmadd_ps(_mm256_loadu_ps(dy + i), g, d);
        _mm256_storeu_ps(dx + i, d);
    }
    if (i < n)
        scalar::gelu_grad(x + i, dy + i, dx + i, n - i);
}

void axpy(float alpha, const float* x, float* y, int n) {
    const __m256 av = _mm256_set1_ps(alpha);
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 yv = _mm256_loadu_ps(y + i);
        yv = _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), yv);
        _mm256_storeu_ps(y + i, yv);
    }
    for (; i < n; ++i)
        y[i] += alpha * x[i];
}

float sumsq(const float* x, int n) {
    __m256 acc = _mm256_setzero_ps();
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_loadu_ps(x + i);
        acc = _mm256_fmadd_ps(v, v, acc);
    }
    float s = hsum(acc);
    for (; i < n; ++i)
        s += x[i] * x[i];
    return s;
}

void softmax_rows(float* x, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        float* row = x + (std::size_t)r * cols;
        float mx = row[0];
        for (int j = 1; j < cols; ++j)
            mx = std::max(mx, row[j]);
        const __m256 mv = _mm256_set1_ps(mx);
        __m256 sacc = _mm256_setzero_ps();
        int j = 0;
        for (; j + 8 <= cols; j += 8) {
            const __m256 e = exp_ps(_mm256_sub_ps(_mm256_loadu_ps(row + j), mv));
            _mm256_storeu_ps(row + j, e);
            sacc = _mm256_add_ps(sacc, e);
        }
        float sum = hsum(sacc);
        for (; j < cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const float inv = 1.0f / sum;
        for (j = 0; j < cols; ++j)
            row[j] *= inv;
    }
}

} // namespace covar::kern::avx2
