// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "covar/kernels.hpp"
#include "covar/rng.hpp"
#include "covar/tensor.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

// Small reverse-mode layer library. Each module caches what its backward
// pass needs; the pattern is one forward per sample followed by one matching
// backward, with gradients accumulated into the parameter registry.

namespace covar::nn {

enum class Init { TruncNormal, Zero };

template <typename T>
struct Param {
    std::string name;
    std::vector<int> shape;
    Init init = Init::TruncNormal;
    std::vector<T> w;
    std::vector<T> g;

    std::size_t size() const { return w.size(); }
};

template <typename T>
class Registry {
public:
    Param<T>* add(std::string name, std::vector<int> shape, Init init) {
        auto p = std::make_unique<Param<T>>();
        p->name = std::move(name);
        p->shape = std::move(shape);
        p->init = init;
        std::size_t n = 1;
        for (int d : p->shape)
            n *= static_cast<std::size_t>(d);
        p->w.assign(n, T(0));
        p->g.assign(n, T(0));
        params_.push_back(std::move(p));
        return params_.back().get();
    }

    std::vector<std::unique_ptr<Param<T>>>& params() { return params_; }
    const std::vector<std::unique_ptr<Param<T>>>& params() const { return params_; }

    Param<T>* find(const std::string& name) {
        for (auto& p : params_)
            if (p->name == name)
                return p.get();
        return nullptr;
    }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& p : params_)
            n += p->size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_)
            std::fill(p->g.begin(), p->g.end(), T(0));
    }

    // Truncated normal (resample beyond 2 sigma), sigma = 0.02; zero-init
    // for biases and flagged projections.
    void init_weights(Rng& rng) {
        for (auto& p : params_) {
            if (p->init == Init::Zero) {
                std::fill(p->w.begin(), p->w.end(), T(0));
                continue;
            }
            for (auto& x : p->w) {
                double z;
                do {
                    z = rng.normal();
                } while (std::abs(z) > 2.0);
                x = static_cast<T>(0.02 * z);
            }
        }
    }

private:
    std::vector<std::unique_ptr<Param<T>>> params_;
};

// ---------------------------------------------------------------------------
// Linear: y = x W + b,  x: [n, in], W: [in, out]
// ---------------------------------------------------------------------------

template <typename T>
struct Linear {
    Param<T>* weight = nullptr;
    Param<T>* bias = nullptr;
    int in = 0, out = 0;
    Tensor<T> x_cache;

    void build(Registry<T>& reg, const std::string& name, int in_dim, int out_dim,
               Init winit = Init::TruncNormal, bool with_bias = true) {
        in = in_dim;
        out = out_dim;
        weight = reg.add(name + ".weight", {in_dim, out_dim}, winit);
        if (with_bias)
            bias = reg.add(name + ".bias", {out_dim}, Init::Zero);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        const int n = static_cast<int>(x.size()) / in;
        x_cache = x;
        Tensor<T> y({n, out});
        kern::matmul_nn(x.data(), weight->w.data(), y.data(), n, in, out, false);
        if (bias)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < out; ++j)
                    y[static_cast<std::size_t>(i) * out + j] += bias->w[j];
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const int n = static_cast<int>(dy.size()) / out;
        // dW += x^T dy
        kern::matmul_tn(x_cache.data(), dy.data(), weight->g.data(), in, n, out, true);
        if (bias)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < out; ++j)
                    bias->g[j] += dy[static_cast<std::size_t>(i) * out + j];
        Tensor<T> dx(x_cache.shape);
        kern::matmul_nt(dy.data(), weight->w.data(), dx.data(), n, out, in, false);
        return dx;
    }
};

// ---------------------------------------------------------------------------
// LayerNorm (no learned affine) with optional external modulation:
//   y = xhat * (1 + scale) + shift
// scale/shift are per-channel vectors produced elsewhere (adaptive norm).
// ---------------------------------------------------------------------------

template <typename T>
struct LayerNorm {
    int dim = 0;
    Tensor<T> xhat_cache;
    std::vector<T> rstd_cache;
    const T* scale_cache = nullptr;

    explicit LayerNorm(int d = 0) : dim(d) {}

    // scale/shift may be nullptr for a plain non-affine layernorm.
    Tensor<T> forward(const Tensor<T>& x, const T* shift, const T* scale) {
        const int n = static_cast<int>(x.size()) / dim;
        xhat_cache = Tensor<T>({n, dim});
        rstd_cache.assign(n, T(0));
        scale_cache = scale;
        Tensor<T> y({n, dim});
        constexpr T eps = static_cast<T>(1e-5);
        for (int i = 0; i < n; ++i) {
            const T* xi = x.data() + static_cast<std::size_t>(i) * dim;
            T* xh = xhat_cache.data() + static_cast<std::size_t>(i) * dim;
            T* yi = y.data() + static_cast<std::size_t>(i) * dim;
            T mu = T(0);
            for (int j = 0; j < dim; ++j)
                mu += xi[j];
            mu /= static_cast<T>(dim);
            T var = T(0);
            for (int j = 0; j < dim; ++j) {
                const T d = xi[j] - mu;
                var += d * d;
            }
            var /= static_cast<T>(dim);
            const T rstd = T(1) / std::sqrt(var + eps);
            rstd_cache[i] = rstd;
            for (int j = 0; j < dim; ++j) {
                xh[j] = (xi[j] - mu) * rstd;
                T v = xh[j];
                if (scale)
                    v *= T(1) + scale[j];
                if (shift)
                    v += shift[j];
                yi[j] = v;
            }
        }
        return y;
    }

    // dshift/dscale accumulated when non-null.
    Tensor<T> backward(const Tensor<T>& dy, T* dshift, T* dscale) {
        const int n = static_cast<int>(dy.size()) / dim;
        Tensor<T> dx({n, dim});
        std::vector<T> dxhat(dim);
        for (int i = 0; i < n; ++i) {
            const T* dyi = dy.data() + static_cast<std::size_t>(i) * dim;
            const T* xh = xhat_cache.data() + static_cast<std::size_t>(i) * dim;
            T* dxi = dx.data() + static_cast<std::size_t>(i) * dim;
            T m1 = T(0), m2 = T(0);
            for (int j = 0; j < dim; ++j) {
                T dxh = dyi[j];
                if (scale_cache)
                    dxh *= T(1) + scale_cache[j];
                dxhat[j] = dxh;
                m1 += dxh;
                m2 += dxh * xh[j];
                if (dshift)
                    dshift[j] += dyi[j];
                if (dscale)
                    dscale[j] += dyi[j] * xh[j];
            }
            m1 /= static_cast<T>(dim);
            m2 /= static_cast<T>(dim);
            const T rstd = rstd_cache[i];
            for (int j = 0; j < dim; ++j)
                dxi[j] = rstd * (dxhat[j] - m1 - xh[j] * m2);
        }
        return dx;
    }
};

// ---------------------------------------------------------------------------
// Multi-head scaled-dot-product attention core over already-projected q/k/v.
// q: [nq, C], k/v: [nk, C]. Optional additive mask [nq, nk] shared by heads.
// ---------------------------------------------------------------------------

template <typename T>
struct AttentionCore {
    int dim = 0, heads = 0;
    int nq_cache = 0, nk_cache = 0;
    Tensor<T> q_cache, k_cache, v_cache;
    std::vector<Tensor<T>> probs_cache; // per head [nq, nk]

    AttentionCore(int d = 0, int h = 0) : dim(d), heads(h) {
        if (d > 0 && h > 0 && d % h != 0)
            throw std::invalid_argument("attention: heads must divide dim");
    }

    Tensor<T> forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                      const T* mask = nullptr) {
        const int dh = dim / heads;
        const int nq = static_cast<int>(q.size()) / dim;
        const int nk = static_cast<int>(k.size()) / dim;
        nq_cache = nq;
        nk_cache = nk;
        q_cache = q;
        k_cache = k;
        v_cache = v;
        probs_cache.assign(heads, Tensor<T>());
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

        Tensor<T> qh({nq, dh}), kh({nk, dh}), vh({nk, dh});
        Tensor<T> out({nq, dim});
        for (int h = 0; h < heads; ++h) {
            const int off = h * dh;
            for (int i = 0; i < nq; ++i)
                std::copy_n(q.data() + static_cast<std::size_t>(i) * dim + off, dh,
                            qh.data() + static_cast<std::size_t>(i) * dh);
            for (int i = 0; i < nk; ++i) {
                std::copy_n(k.data() + static_cast<std::size_t>(i) * dim + off, dh,
                            kh.data() + static_cast<std::size_t>(i) * dh);
                std::copy_n(v.data() + static_cast<std::size_t>(i) * dim + off, dh,
                            vh.data() + static_cast<std::size_t>(i) * dh);
            }
            Tensor<T>& p = probs_cache[h];
            p = Tensor<T>({nq, nk});
            kern::matmul_nt(qh.data(), kh.data(), p.data(), nq, dh, nk, false);
            for (std::size_t i = 0; i < p.size(); ++i)
                p[i] *= scale;
            if (mask)
                for (std::size_t i = 0; i < p.size(); ++i)
                    p[i] += mask[i];
            kern::softmax_rows(p.data(), nq, nk);

            Tensor<T> oh({nq, dh});
            kern::matmul_nn(p.data(), vh.data(), oh.data(), nq, nk, dh, false);
            for (int i = 0; i < nq; ++i)
                std::copy_n(oh.data() + static_cast<std::size_t>(i) * dh, dh,
                            out.data() + static_cast<std::size_t>(i) * dim + off);
        }
        return out;
    }

    void backward(const Tensor<T>& dout, Tensor<T>& dq, Tensor<T>& dk, Tensor<T>& dv) {
        const int dh = dim / heads;
        const int nq = nq_cache, nk = nk_cache;
        dq = Tensor<T>({nq, dim});
        dk = Tensor<T>({nk, dim});
        dv = Tensor<T>({nk, dim});
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

        Tensor<T> doh({nq, dh}), kh({nk, dh}), vh({nk, dh}), qh({nq, dh});
        for (int h = 0; h < heads; ++h) {
            const int off = h * dh;
            for (int i = 0; i < nq; ++i) {
                std::copy_n(dout.data() + static_cast<std::size_t>(i) * dim + off, dh,
                            doh.data() + static_cast<std::size_t>(i) * dh);
                std::copy_n(q_cache.data() + static_cast<std::size_t>(i) * dim + off, dh,
                            qh.data() + static_cast<std::size_t>(i) * dh);
            }
            for (int i = 0; i < nk; ++i) {
                std::copy_n(k_cache.data() + static_cast<std::size_t>(i) * dim + off, dh,
                            kh.data() + static_cast<std::size_t>(i) * dh);
                std::copy_n(v_cache.data() + static_cast<std::size_t>(i) * dim + off, dh,
                            vh.data() + static_cast<std::size_t>(i) * dh);
            }
            const Tensor<T>& p = probs_cache[h];

            // dV_h = P^T dO_h
            Tensor<T> dvh({nk, dh});
            kern::matmul_tn(p.data(), doh.data(), dvh.data(), nk, nq, dh, false);
            // dP = dO_h V_h^T
            Tensor<T> dp({nq, nk});
            kern::matmul_nt(doh.data(), vh.data(), dp.data(), nq, dh, nk, false);
            // softmax backward: dS = P .* (dP - rowsum(dP .* P))
            for (int i = 0; i < nq; ++i) {
                const T* pi = p.data() + static_cast<std::size_t>(i) * nk;
                T* dpi = dp.data() + static_cast<std::size_t>(i) * nk;
                T dot = T(0);
                for (int j = 0; j < nk; ++j)
                    dot += dpi[j] * pi[j];
                for (int j = 0; j < nk; ++j)
                    dpi[j] = pi[j] * (dpi[j] - dot) * scale; // fold score scale in
            }
            // dQ_h = dS K_h ; dK_h = dS^T Q_h
            Tensor<T> dqh({nq, dh});
            kern::matmul_nn(dp.data(), kh.data(), dqh.data(), nq, nk, dh, false);
            Tensor<T> dkh({nk, dh});
            kern::matmul_tn(dp.data(), qh.data(), dkh.data(), nk, nq, dh, false);

            for (int i = 0; i < nq; ++i)
                std::copy_n(dqh.data() + static_cast<std::size_t>(i) * dh, dh,
                            dq.data() + static_cast<std::size_t>(i) * dim + off);
            for (int i = 0; i < nk; ++i) {
                std::copy_n(dkh.data() + static_cast<std::size_t>(i) * dh, dh,
                            dk.data() + static_cast<std::size_t>(i) * dim + off);
                std::copy_n(dvh.data() + static_cast<std::size_t>(i) * dh, dh,
                            dv.data() + static_cast<std::size_t>(i) * dim + off);
            }
        }
    }
};

// ---------------------------------------------------------------------------
// GELU-activated two-layer MLP.
// ---------------------------------------------------------------------------

template <typename T>
struct Mlp {
    Linear<T> fc1, fc2;
    Tensor<T> pre_cache;

    void build(Registry<T>& reg, const std::string& name, int in, int hidden, int out,
               Init out_init = Init::TruncNormal) {
        fc1.build(reg, name + ".fc1", in, hidden);
        fc2.build(reg, name + ".fc2", hidden, out, out_init);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        pre_cache = fc1.forward(x);
        Tensor<T> h(pre_cache.shape);
        kern::gelu(pre_cache.data(), h.data(), static_cast<int>(h.size()));
        return fc2.forward(h);
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dh = fc2.backward(dy);
        Tensor<T> dpre(dh.shape);
        dpre.fill(T(0));
        kern::gelu_grad(pre_cache.data(), dh.data(), dpre.data(), static_cast<int>(dh.size()));
        return fc1.backward(dpre);
    }
};

// ---------------------------------------------------------------------------
// Token embedding table.
// ---------------------------------------------------------------------------

template <typename T>
struct Embedding {
    Param<T>* table = nullptr;
    int vocab = 0, dim = 0;
    std::vector<std::int32_t> ids_cache;

    void build(Registry<T>& reg, const std::string& name, int vocab_size, int d) {
        vocab = vocab_size;
        dim = d;
        table = reg.add(name + ".table", {vocab_size, d}, Init::TruncNormal);
    }

    Tensor<T> forward(const std::vector<std::int32_t>& ids) {
        ids_cache = ids;
        Tensor<T> out({static_cast<int>(ids.size()), dim});
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= vocab)
                throw std::invalid_argument("embedding: token id out of range");
            std::copy_n(table->w.data() + static_cast<std::size_t>(ids[i]) * dim, dim,
                        out.data() + i * dim);
        }
        return out;
    }

    void backward(const Tensor<T>& dy) {
        for (std::size_t i = 0; i < ids_cache.size(); ++i)
            for (int j = 0; j < dim; ++j)
                table->g[static_cast<std::size_t>(ids_cache[i]) * dim + j] +=
                    dy[i * dim + j];
    }
};

// ---------------------------------------------------------------------------
// 1-D convolution over time, channels-last layout ([T, C]), kernel 3, pad 1.
// Implemented as im2col + matmul so the gemm kernels carry the work.
// ---------------------------------------------------------------------------

template <typename T>
struct Conv1d {
    Param<T>* weight = nullptr; // [out, in*k]
    Param<T>* bias = nullptr;
    int cin = 0, cout = 0, kernel = 3, stride = 1;
    int t_in_cache = 0;
    Tensor<T> cols_cache;

    void build(Registry<T>& reg, const std::string& name, int in, int out, int stride_,
               Init winit = Init::TruncNormal) {
        cin = in;
        cout = out;
        stride = stride_;
        weight = reg.add(name + ".weight", {out, in * kernel}, winit);
        bias = reg.add(name + ".bias", {out}, Init::Zero);
    }

    int out_len(int t) const { return (t + 2 - kernel) / stride + 1; }

    Tensor<T> forward(const Tensor<T>& x) {
        const int t = x.shape[0];
        t_in_cache = t;
        const int to = out_len(t);
        cols_cache = Tensor<T>({to, cin * kernel});
        for (int i = 0; i < to; ++i) {
            for (int kk = 0; kk < kernel; ++kk) {
                const int src = i * stride - 1 + kk;
                T* dst = cols_cache.data() + (static_cast<std::size_t>(i) * kernel + kk) * cin;
                if (src < 0 || src >= t)
                    std::fill_n(dst, cin, T(0));
                else
                    std::copy_n(x.data() + static_cast<std::size_t>(src) * cin, cin, dst);
            }
        }
        Tensor<T> y({to, cout});
        kern::matmul_nt(cols_cache.data(), weight->w.data(), y.data(), to, cin * kernel, cout,
                        false);
        for (int i = 0; i < to; ++i)
            for (int j = 0; j < cout; ++j)
                y[static_cast<std::size_t>(i) * cout + j] += bias->w[j];
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const int to = dy.shape[0];
        // dW += dy^T cols
        kern::matmul_tn(dy.data(), cols_cache.data(), weight->g.data(), cout, to, cin * kernel,
                        true);
        for (int i = 0; i < to; ++i)
            for (int j = 0; j < cout; ++j)
                bias->g[j] += dy[static_cast<std::size_t>(i) * cout + j];
        // dcols = dy W, then scatter back to time steps
        Tensor<T> dcols({to, cin * kernel});
        kern::matmul_nn(dy.data(), weight->w.data(), dcols.data(), to, cout, cin * kernel, false);
        Tensor<T> dx({t_in_cache, cin});
        for (int i = 0; i < to; ++i) {
            for (int kk = 0; kk < kernel; ++kk) {
                const int src = i * stride - 1 + kk;
                if (src < 0 || src >= t_in_cache)
                    continue;
                const T* s = dcols.data() + (static_cast<std::size_t>(i) * kernel + kk) * cin;
                T* d = dx.data() + static_cast<std::size_t>(src) * cin;
                for (int c = 0; c < cin; ++c)
                    d[c] += s[c];
            }
        }
        return dx;
    }
};

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

template <typename T>
void silu(const T* x, T* y, int n) {
    for (int i = 0; i < n; ++i) {
        const T s = T(1) / (T(1) + std::exp(-x[i]));
        y[i] = x[i] * s;
    }
}

template <typename T>
void silu_grad(const T* x, const T* dy, T* dx, int n) {
    for (int i = 0; i < n; ++i) {
        const T s = T(1) / (T(1) + std::exp(-x[i]));
        dx[i] += dy[i] * s * (T(1) + x[i] * (T(1) - s));
    }
}

// Sinusoidal encoding of a scalar position into dim channels.
template <typename T>
void sin_embed(double pos, T* out, int dim, double max_period = 10000.0) {
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(max_period) * i / half);
        out[i] = static_cast<T>(std::cos(pos * freq));
        out[half + i] = static_cast<T>(std::sin(pos * freq));
    }
    if (dim % 2)
        out[dim - 1] = T(0);
}

// Positional table for a 1-D sequence.
template <typename T>
Tensor<T> pos_table_1d(int n, int dim) {
    Tensor<T> t({n, dim});
    for (int i = 0; i < n; ++i)
        sin_embed(static_cast<double>(i), t.data() + static_cast<std::size_t>(i) * dim, dim);
    return t;
}

// Factorized space-time table: frame index on the first half of channels,
// spatial (row, col) on the remaining quarters.
template <typename T>
Tensor<T> pos_table_spacetime(int frames, int gh, int gw, int dim) {
    Tensor<T> t({frames * gh * gw, dim});
    const int dt = dim / 2;
    const int dy = dim / 4;
    const int dx = dim - dt - dy;
    std::size_t row = 0;
    for (int f = 0; f < frames; ++f)
        for (int y = 0; y < gh; ++y)
            for (int x = 0; x < gw; ++x, ++row) {
                T* p = t.data() + row * dim;
                sin_embed(static_cast<double>(f), p, dt);
                sin_embed(static_cast<double>(y), p + dt, dy);
                sin_embed(static_cast<double>(x), p + dt + dy, dx);
            }
    return t;
}

} // namespace covar::nn
