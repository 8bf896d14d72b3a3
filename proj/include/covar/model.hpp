// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "covar/flow.hpp"
#include "covar/nn.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

// Co-generation network: a video token stream and an action token stream
// processed by paired transformer blocks. The streams couple through joint
// attention with per-modality projections (bridge mode); ablation arms swap
// in shared-projection self-attention, self+cross attention, an MLP action
// decoder, or drop the video stream entirely.

namespace covar {

enum class AttnMode { Bridge, Self, Cross };
enum class DecoderKind { Unet, Mlp };

struct ModelConfig {
    int hidden = 128;
    int heads = 4;
    int block_pairs = 4;
    int patch = 8;
    int frames = 8;
    int height = 32;
    int width = 32;
    int action_dim = 3;
    int vocab = 32;
    int text_len = 8;
    AttnMode attn = AttnMode::Bridge;
    DecoderKind decoder = DecoderKind::Unet;
    bool video_branch = true;
    int bridge_interval = 1; // coupled attention every k-th block pair

    int video_tokens() const { return frames * (height / patch) * (width / patch); }
    int action_tokens() const { return frames + 1; }
    int patch_dim() const { return 3 * patch * patch; }

    void validate() const {
        if (hidden <= 0 || heads <= 0 || block_pairs <= 0 || frames <= 0)
            throw std::invalid_argument("config: non-positive dimension");
        if (hidden % heads != 0)
            throw std::invalid_argument("config: heads must divide hidden");
        if (height % patch != 0 || width % patch != 0)
            throw std::invalid_argument("config: patch must divide height and width");
        if (decoder == DecoderKind::Unet && frames < 4)
            throw std::invalid_argument("config: UNet decoder needs frames >= 4");
        if (bridge_interval < 1)
            throw std::invalid_argument("config: bridge_interval must be >= 1");
    }
};

template <typename T>
struct Conditioning {
    Tensor<T> initial_frame;      // 3 x H x W
    std::vector<T> initial_action; // L
    std::vector<std::int32_t> tokens;
};

namespace detail {

// Residual gating y = x + gate (.) o with a per-channel gate.
template <typename T>
void apply_gate(Tensor<T>& f, const Tensor<T>& o, const T* gate, int dim) {
    const int n = static_cast<int>(f.size()) / dim;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dim; ++j)
            f[static_cast<std::size_t>(i) * dim + j] +=
                gate[j] * o[static_cast<std::size_t>(i) * dim + j];
}

template <typename T>
Tensor<T> gate_backward(const Tensor<T>& dy, const Tensor<T>& o, const T* gate, T* dgate,
                        int dim) {
    const int n = static_cast<int>(dy.size()) / dim;
    Tensor<T> dout({n, dim});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dim; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * dim + j;
            dgate[j] += dy[idx] * o[idx];
            dout[idx] = dy[idx] * gate[j];
        }
    return dout;
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b, int dim) {
    const int na = static_cast<int>(a.size()) / dim;
    const int nb = static_cast<int>(b.size()) / dim;
    Tensor<T> out({na + nb, dim});
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.size());
    return out;
}

template <typename T>
void split_rows(const Tensor<T>& joint, Tensor<T>& a, Tensor<T>& b, int na, int dim) {
    const int nb = static_cast<int>(joint.size()) / dim - na;
    a = Tensor<T>({na, dim});
    b = Tensor<T>({nb, dim});
    std::copy_n(joint.v.begin(), a.size(), a.v.begin());
    std::copy_n(joint.v.begin() + a.size(), b.size(), b.v.begin());
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        a[i] += b[i];
}

} // namespace detail

// ---------------------------------------------------------------------------
// One coupled block pair.
// ---------------------------------------------------------------------------

template <typename T>
struct BlockPair {
    const ModelConfig* cfg = nullptr;
    int dim = 0;
    bool coupled = true; // joint attention this block (bridge_interval)

    // adaptive-norm modulation: 3 sublayers x (shift, scale, gate) per modality
    nn::Linear<T> mod_v, mod_a;
    // attention stage
    nn::Linear<T> q_v, k_v, v_v, o_v, q_a, k_a, v_a, o_a; // bridge
    nn::Linear<T> q_s, k_s, v_s, o_s;                     // shared (self / cross)
    nn::Linear<T> q_va, k_va, v_va, o_va;                 // cross: video queries action
    nn::Linear<T> q_av, k_av, v_av, o_av;                 // cross: action queries video
    nn::AttentionCore<T> joint_core, cross_core_va, cross_core_av;
    nn::LayerNorm<T> ln1_v, ln1_a;
    // text cross-attention per modality
    nn::Linear<T> tq_v, tk_v, tv_v, to_v, tq_a, tk_a, tv_a, to_a;
    nn::AttentionCore<T> text_core_v, text_core_a;
    nn::LayerNorm<T> ln2_v, ln2_a;
    // feed-forward per modality
    nn::Mlp<T> mlp_v, mlp_a;
    nn::LayerNorm<T> ln3_v, ln3_a;

    // forward caches
    Tensor<T> mod9_v, mod9_a;
    Tensor<T> o1_v, o1_a, o2_v, o2_a, o3_v, o3_a; // sublayer outputs pre-gate
    Tensor<T> dmod9_v, dmod9_a;
    Tensor<T> self_split_v, self_split_a; // cross mode: self outputs before o_s

    void build(nn::Registry<T>& reg, const std::string& name, const ModelConfig& c,
               bool coupled_block) {
        cfg = &c;
        dim = c.hidden;
        coupled = coupled_block;
        const int h = c.heads;
        joint_core = nn::AttentionCore<T>(dim, h);
        cross_core_va = nn::AttentionCore<T>(dim, h);
        cross_core_av = nn::AttentionCore<T>(dim, h);
        text_core_v = nn::AttentionCore<T>(dim, h);
        text_core_a = nn::AttentionCore<T>(dim, h);
        ln1_v = ln1_a = ln2_v = ln2_a = ln3_v = ln3_a = nn::LayerNorm<T>(dim);

        const bool video = c.video_branch;
        mod_a.build(reg, name + ".mod_a", dim, 9 * dim, nn::Init::Zero);
        if (video)
            mod_v.build(reg, name + ".mod_v", dim, 9 * dim, nn::Init::Zero);

        if (!video || c.attn == AttnMode::Bridge) {
            q_a.build(reg, name + ".attn.q_a", dim, dim);
            k_a.build(reg, name + ".attn.k_a", dim, dim);
            v_a.build(reg, name + ".attn.v_a", dim, dim);
            o_a.build(reg, name + ".attn.o_a", dim, dim);
            if (video) {
                q_v.build(reg, name + ".attn.q_v", dim, dim);
                k_v.build(reg, name + ".attn.k_v", dim, dim);
                v_v.build(reg, name + ".attn.v_v", dim, dim);
                o_v.build(reg, name + ".attn.o_v", dim, dim);
            }
        } else {
            q_s.build(reg, name + ".attn.q", dim, dim);
            k_s.build(reg, name + ".attn.k", dim, dim);
            v_s.build(reg, name + ".attn.v", dim, dim);
            o_s.build(reg, name + ".attn.o", dim, dim);
            if (c.attn == AttnMode::Cross) {
                q_va.build(reg, name + ".cross.q_va", dim, dim);
                k_va.build(reg, name + ".cross.k_va", dim, dim);
                v_va.build(reg, name + ".cross.v_va", dim, dim);
                o_va.build(reg, name + ".cross.o_va", dim, dim);
                q_av.build(reg, name + ".cross.q_av", dim, dim);
                k_av.build(reg, name + ".cross.k_av", dim, dim);
                v_av.build(reg, name + ".cross.v_av", dim, dim);
                o_av.build(reg, name + ".cross.o_av", dim, dim);
            }
        }

        tq_a.build(reg, name + ".text.q_a", dim, dim);
        tk_a.build(reg, name + ".text.k_a", dim, dim);
        tv_a.build(reg, name + ".text.v_a", dim, dim);
        to_a.build(reg, name + ".text.o_a", dim, dim);
        mlp_a.build(reg, name + ".mlp_a", dim, 4 * dim, dim);
        if (video) {
            tq_v.build(reg, name + ".text.q_v", dim, dim);
            tk_v.build(reg, name + ".text.k_v", dim, dim);
            tv_v.build(reg, name + ".text.v_v", dim, dim);
            to_v.build(reg, name + ".text.o_v", dim, dim);
            mlp_v.build(reg, name + ".mlp_v", dim, 4 * dim, dim);
        }
    }

    // e_act: silu(t_embed), 1 x C. mask: optional additive [nv+na]^2.
    void forward(Tensor<T>& f_v, Tensor<T>& f_a, const Tensor<T>& txt, const Tensor<T>& e_act,
                 const T* joint_mask) {
        const bool video = cfg->video_branch;
        mod9_a = mod_a.forward(e_act);
        if (video)
            mod9_v = mod_v.forward(e_act);
        const T* ma = mod9_a.data();
        const T* mv = video ? mod9_v.data() : nullptr;
        const int C = dim;
        auto shift = [C](const T* m, int sub) { return m + 3 * C * sub; };
        auto scale = [C](const T* m, int sub) { return m + 3 * C * sub + C; };
        auto gate = [C](const T* m, int sub) { return m + 3 * C * sub + 2 * C; };

        // --- attention stage ---
        Tensor<T> h_a = ln1_a.forward(f_a, shift(ma, 0), scale(ma, 0));
        if (!video) {
            Tensor<T> q, k, v;
            if (cfg->attn == AttnMode::Bridge) {
                q = q_a.forward(h_a);
                k = k_a.forward(h_a);
                v = v_a.forward(h_a);
                o1_a = o_a.forward(joint_core.forward(q, k, v));
            } else {
                q = q_s.forward(h_a);
                k = k_s.forward(h_a);
                v = v_s.forward(h_a);
                o1_a = o_s.forward(joint_core.forward(q, k, v));
            }
            detail::apply_gate(f_a, o1_a, gate(ma, 0), C);
        } else {
            Tensor<T> h_v = ln1_v.forward(f_v, shift(mv, 0), scale(mv, 0));
            const int nv = static_cast<int>(h_v.size()) / C;
            if (cfg->attn == AttnMode::Bridge) {
                Tensor<T> q = detail::concat_rows(q_v.forward(h_v), q_a.forward(h_a), C);
                Tensor<T> k = detail::concat_rows(k_v.forward(h_v), k_a.forward(h_a), C);
                Tensor<T> v = detail::concat_rows(v_v.forward(h_v), v_a.forward(h_a), C);
                Tensor<T> joint = joint_core.forward(q, k, v, joint_mask);
                Tensor<T> jv, ja;
                detail::split_rows(joint, jv, ja, nv, C);
                o1_v = o_v.forward(jv);
                o1_a = o_a.forward(ja);
            } else {
                // shared projections over the concatenated streams; the
                // block-diagonal mask keeps attention within each modality
                Tensor<T> h = detail::concat_rows(h_v, h_a, C);
                Tensor<T> q = q_s.forward(h);
                Tensor<T> k = k_s.forward(h);
                Tensor<T> v = v_s.forward(h);
                Tensor<T> joint = joint_core.forward(q, k, v, joint_mask);
                Tensor<T> out = o_s.forward(joint);
                detail::split_rows(out, o1_v, o1_a, nv, C);
                if (cfg->attn == AttnMode::Cross) {
                    self_split_v = o1_v;
                    self_split_a = o1_a;
                    Tensor<T> cv = o_va.forward(cross_core_va.forward(
                        q_va.forward(h_v), k_va.forward(h_a), v_va.forward(h_a)));
                    Tensor<T> ca = o_av.forward(cross_core_av.forward(
                        q_av.forward(h_a), k_av.forward(h_v), v_av.forward(h_v)));
                    detail::add_inplace(o1_v, cv);
                    detail::add_inplace(o1_a, ca);
                }
            }
            detail::apply_gate(f_v, o1_v, gate(mv, 0), C);
            detail::apply_gate(f_a, o1_a, gate(ma, 0), C);
        }

        // --- text cross-attention ---
        if (video) {
            Tensor<T> h_v = ln2_v.forward(f_v, shift(mv, 1), scale(mv, 1));
            o2_v = to_v.forward(
                text_core_v.forward(tq_v.forward(h_v), tk_v.forward(txt), tv_v.forward(txt)));
            detail::apply_gate(f_v, o2_v, gate(mv, 1), C);
        }
        {
            Tensor<T> h_a = ln2_a.forward(f_a, shift(ma, 1), scale(ma, 1));
            o2_a = to_a.forward(
                text_core_a.forward(tq_a.forward(h_a), tk_a.forward(txt), tv_a.forward(txt)));
            detail::apply_gate(f_a, o2_a, gate(ma, 1), C);
        }

        // --- feed-forward ---
        if (video) {
            o3_v = mlp_v.forward(ln3_v.forward(f_v, shift(mv, 2), scale(mv, 2)));
            detail::apply_gate(f_v, o3_v, gate(mv, 2), C);
        }
        o3_a = mlp_a.forward(ln3_a.forward(f_a, shift(ma, 2), scale(ma, 2)));
        detail::apply_gate(f_a, o3_a, gate(ma, 2), C);
    }

    // df_v/df_a are gradients w.r.t. the block outputs and are replaced by
    // gradients w.r.t. the block inputs. dtxt and de_act accumulate.
    void backward(Tensor<T>& df_v, Tensor<T>& df_a, Tensor<T>& dtxt, Tensor<T>& de_act) {
        const bool video = cfg->video_branch;
        const int C = dim;
        dmod9_a = Tensor<T>({1, 9 * C});
        if (video)
            dmod9_v = Tensor<T>({1, 9 * C});
        const T* ma = mod9_a.data();
        const T* mv = video ? mod9_v.data() : nullptr;
        T* dma = dmod9_a.data();
        T* dmv = video ? dmod9_v.data() : nullptr;
        auto gate = [C](const T* m, int sub) { return m + 3 * C * sub + 2 * C; };
        auto dshift = [C](T* m, int sub) { return m + 3 * C * sub; };
        auto dscale = [C](T* m, int sub) { return m + 3 * C * sub + C; };
        auto dgate = [C](T* m, int sub) { return m + 3 * C * sub + 2 * C; };

        // --- feed-forward ---
        {
            Tensor<T> dout = detail::gate_backward(df_a, o3_a, gate(ma, 2), dgate(dma, 2), C);
            Tensor<T> dh = mlp_a.backward(dout);
            detail::add_inplace(df_a, ln3_a.backward(dh, dshift(dma, 2), dscale(dma, 2)));
        }
        if (video) {
            Tensor<T> dout = detail::gate_backward(df_v, o3_v, gate(mv, 2), dgate(dmv, 2), C);
            Tensor<T> dh = mlp_v.backward(dout);
            detail::add_inplace(df_v, ln3_v.backward(dh, dshift(dmv, 2), dscale(dmv, 2)));
        }

        // --- text cross-attention ---
        {
            Tensor<T> dout = detail::gate_backward(df_a, o2_a, gate(ma, 1), dgate(dma, 1), C);
            Tensor<T> dcore = to_a.backward(dout);
            Tensor<T> dq, dk, dv;
            text_core_a.backward(dcore, dq, dk, dv);
            detail::add_inplace(dtxt, tk_a.backward(dk));
            detail::add_inplace(dtxt, tv_a.backward(dv));
            Tensor<T> dh = tq_a.backward(dq);
            detail::add_inplace(df_a, ln2_a.backward(dh, dshift(dma, 1), dscale(dma, 1)));
        }
        if (video) {
            Tensor<T> dout = detail::gate_backward(df_v, o2_v, gate(mv, 1), dgate(dmv, 1), C);
            Tensor<T> dcore = to_v.backward(dout);
            Tensor<T> dq, dk, dv;
            text_core_v.backward(dcore, dq, dk, dv);
            detail::add_inplace(dtxt, tk_v.backward(dk));
            detail::add_inplace(dtxt, tv_v.backward(dv));
            Tensor<T> dh = tq_v.backward(dq);
            detail::add_inplace(df_v, ln2_v.backward(dh, dshift(dmv, 1), dscale(dmv, 1)));
        }

        // --- attention stage ---
        if (!video) {
            Tensor<T> dout = detail::gate_backward(df_a, o1_a, gate(ma, 0), dgate(dma, 0), C);
            Tensor<T> dq, dk, dv, dh;
            if (cfg->attn == AttnMode::Bridge) {
                Tensor<T> dcore = o_a.backward(dout);
                joint_core.backward(dcore, dq, dk, dv);
                dh = q_a.backward(dq);
                detail::add_inplace(dh, k_a.backward(dk));
                detail::add_inplace(dh, v_a.backward(dv));
            } else {
                Tensor<T> dcore = o_s.backward(dout);
                joint_core.backward(dcore, dq, dk, dv);
                dh = q_s.backward(dq);
                detail::add_inplace(dh, k_s.backward(dk));
                detail::add_inplace(dh, v_s.backward(dv));
            }
            detail::add_inplace(df_a, ln1_a.backward(dh, dshift(dma, 0), dscale(dma, 0)));
        } else {
            Tensor<T> dout_v = detail::gate_backward(df_v, o1_v, gate(mv, 0), dgate(dmv, 0), C);
            Tensor<T> dout_a = detail::gate_backward(df_a, o1_a, gate(ma, 0), dgate(dma, 0), C);
            const int nv = static_cast<int>(df_v.size()) / C;
            Tensor<T> dh_v, dh_a;
            if (cfg->attn == AttnMode::Bridge) {
                Tensor<T> djv = o_v.backward(dout_v);
                Tensor<T> dja = o_a.backward(dout_a);
                Tensor<T> djoint = detail::concat_rows(djv, dja, C);
                Tensor<T> dq, dk, dv;
                joint_core.backward(djoint, dq, dk, dv);
                Tensor<T> dq_v, dq_a, dk_v, dk_a, dv_v, dv_a;
                detail::split_rows(dq, dq_v, dq_a, nv, C);
                detail::split_rows(dk, dk_v, dk_a, nv, C);
                detail::split_rows(dv, dv_v, dv_a, nv, C);
                dh_v = q_v.backward(dq_v);
                detail::add_inplace(dh_v, k_v.backward(dk_v));
                detail::add_inplace(dh_v, v_v.backward(dv_v));
                dh_a = q_a.backward(dq_a);
                detail::add_inplace(dh_a, k_a.backward(dk_a));
                detail::add_inplace(dh_a, v_a.backward(dv_a));
            } else {
                if (cfg->attn == AttnMode::Cross) {
                    // cross additions first (they read h_v/h_a directly)
                    Tensor<T> dq, dk, dv;
                    Tensor<T> dcv = o_va.backward(dout_v);
                    cross_core_va.backward(dcv, dq, dk, dv);
                    dh_v = q_va.backward(dq);
                    dh_a = k_va.backward(dk);
                    detail::add_inplace(dh_a, v_va.backward(dv));
                    Tensor<T> dca = o_av.backward(dout_a);
                    cross_core_av.backward(dca, dq, dk, dv);
                    detail::add_inplace(dh_a, q_av.backward(dq));
                    detail::add_inplace(dh_v, k_av.backward(dk));
                    detail::add_inplace(dh_v, v_av.backward(dv));
                } else {
                    dh_v = Tensor<T>({nv, C});
                    dh_a = Tensor<T>({static_cast<int>(df_a.size()) / C, C});
                }
                Tensor<T> dout = detail::concat_rows(dout_v, dout_a, C);
                Tensor<T> djoint = o_s.backward(dout);
                Tensor<T> dq, dk, dv;
                joint_core.backward(djoint, dq, dk, dv);
                Tensor<T> dh = q_s.backward(dq);
                detail::add_inplace(dh, k_s.backward(dk));
                detail::add_inplace(dh, v_s.backward(dv));
                Tensor<T> dh_v2, dh_a2;
                detail::split_rows(dh, dh_v2, dh_a2, nv, C);
                detail::add_inplace(dh_v, dh_v2);
                detail::add_inplace(dh_a, dh_a2);
            }
            detail::add_inplace(df_v, ln1_v.backward(dh_v, dshift(dmv, 0), dscale(dmv, 0)));
            detail::add_inplace(df_a, ln1_a.backward(dh_a, dshift(dma, 0), dscale(dma, 0)));
        }

        // modulation producers
        detail::add_inplace(de_act, mod_a.backward(dmod9_a));
        if (video)
            detail::add_inplace(de_act, mod_v.backward(dmod9_v));
    }
};

// ---------------------------------------------------------------------------
// 1-D temporal UNet action decoder.
// ---------------------------------------------------------------------------

template <typename T>
struct UNet1d {
    nn::Conv1d<T> d1, d2, bn, u1, u2;
    nn::Linear<T> head;
    int dim = 0, out_dim = 0;
    Tensor<T> x_cache, pre1, pre2, preb, pre3, pre4, a1, a2, b, a3, a4;

    void build(nn::Registry<T>& reg, const std::string& name, int c, int out) {
        dim = c;
        out_dim = out;
        d1.build(reg, name + ".down1", c, 2 * c, 2);
        d2.build(reg, name + ".down2", 2 * c, 4 * c, 2);
        bn.build(reg, name + ".mid", 4 * c, 4 * c, 1);
        u1.build(reg, name + ".up1", 6 * c, 2 * c, 1);
        u2.build(reg, name + ".up2", 3 * c, c, 1);
        head.build(reg, name + ".head", c, out, nn::Init::Zero);
    }

    static Tensor<T> upsample2(const Tensor<T>& x, int target_len) {
        const int c = x.shape[1];
        Tensor<T> y({target_len, c});
        for (int i = 0; i < target_len; ++i)
            std::copy_n(x.data() + static_cast<std::size_t>(std::min(i / 2, x.shape[0] - 1)) * c,
                        c, y.data() + static_cast<std::size_t>(i) * c);
        return y;
    }

    static Tensor<T> upsample2_backward(const Tensor<T>& dy, int src_len) {
        const int c = dy.shape[1];
        Tensor<T> dx({src_len, c});
        for (int i = 0; i < dy.shape[0]; ++i) {
            const int s = std::min(i / 2, src_len - 1);
            for (int j = 0; j < c; ++j)
                dx[static_cast<std::size_t>(s) * c + j] += dy[static_cast<std::size_t>(i) * c + j];
        }
        return dx;
    }

    static Tensor<T> gelu_of(const Tensor<T>& x) {
        Tensor<T> y(x.shape);
        kern::gelu(x.data(), y.data(), static_cast<int>(x.size()));
        return y;
    }

    Tensor<T> forward(const Tensor<T>& x) { // x: [T, C]
        x_cache = x;
        pre1 = d1.forward(x);
        a1 = gelu_of(pre1);
        pre2 = d2.forward(a1);
        a2 = gelu_of(pre2);
        preb = bn.forward(a2);
        b = gelu_of(preb);
        Tensor<T> up1 = upsample2(b, a1.shape[0]);
        Tensor<T> c1({a1.shape[0], 6 * dim});
        for (int i = 0; i < a1.shape[0]; ++i) {
            std::copy_n(up1.data() + static_cast<std::size_t>(i) * 4 * dim, 4 * dim,
                        c1.data() + static_cast<std::size_t>(i) * 6 * dim);
            std::copy_n(a1.data() + static_cast<std::size_t>(i) * 2 * dim, 2 * dim,
                        c1.data() + static_cast<std::size_t>(i) * 6 * dim + 4 * dim);
        }
        pre3 = u1.forward(c1);
        a3 = gelu_of(pre3);
        Tensor<T> up2 = upsample2(a3, x.shape[0]);
        Tensor<T> c2({x.shape[0], 3 * dim});
        for (int i = 0; i < x.shape[0]; ++i) {
            std::copy_n(up2.data() + static_cast<std::size_t>(i) * 2 * dim, 2 * dim,
                        c2.data() + static_cast<std::size_t>(i) * 3 * dim);
            std::copy_n(x.data() + static_cast<std::size_t>(i) * dim, dim,
                        c2.data() + static_cast<std::size_t>(i) * 3 * dim + 2 * dim);
        }
        pre4 = u2.forward(c2);
        a4 = gelu_of(pre4);
        return head.forward(a4);
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> da4 = head.backward(dy);
        Tensor<T> dpre4(pre4.shape);
        kern::gelu_grad(pre4.data(), da4.data(), dpre4.data(), static_cast<int>(da4.size()));
        Tensor<T> dc2 = u2.backward(dpre4);
        Tensor<T> dup2({x_cache.shape[0], 2 * dim});
        Tensor<T> dx(x_cache.shape);
        for (int i = 0; i < x_cache.shape[0]; ++i) {
            std::copy_n(dc2.data() + static_cast<std::size_t>(i) * 3 * dim, 2 * dim,
                        dup2.data() + static_cast<std::size_t>(i) * 2 * dim);
            std::copy_n(dc2.data() + static_cast<std::size_t>(i) * 3 * dim + 2 * dim, dim,
                        dx.data() + static_cast<std::size_t>(i) * dim);
        }
        Tensor<T> da3 = upsample2_backward(dup2, a3.shape[0]);
        Tensor<T> dpre3(pre3.shape);
        kern::gelu_grad(pre3.data(), da3.data(), dpre3.data(), static_cast<int>(da3.size()));
        Tensor<T> dc1 = u1.backward(dpre3);
        Tensor<T> dup1({a1.shape[0], 4 * dim});
        Tensor<T> da1(a1.shape);
        for (int i = 0; i < a1.shape[0]; ++i) {
            std::copy_n(dc1.data() + static_cast<std::size_t>(i) * 6 * dim, 4 * dim,
                        dup1.data() + static_cast<std::size_t>(i) * 4 * dim);
            std::copy_n(dc1.data() + static_cast<std::size_t>(i) * 6 * dim + 4 * dim, 2 * dim,
                        da1.data() + static_cast<std::size_t>(i) * 2 * dim);
        }
        Tensor<T> db = upsample2_backward(dup1, b.shape[0]);
        Tensor<T> dpreb(preb.shape);
        kern::gelu_grad(preb.data(), db.data(), dpreb.data(), static_cast<int>(db.size()));
        Tensor<T> da2 = bn.backward(dpreb);
        Tensor<T> dpre2(pre2.shape);
        kern::gelu_grad(pre2.data(), da2.data(), dpre2.data(), static_cast<int>(da2.size()));
        detail::add_inplace(da1, d2.backward(dpre2));
        Tensor<T> dpre1(pre1.shape);
        kern::gelu_grad(pre1.data(), da1.data(), dpre1.data(), static_cast<int>(da1.size()));
        detail::add_inplace(dx, d1.backward(dpre1));
        return dx;
    }
};

// ---------------------------------------------------------------------------
// The full model.
// ---------------------------------------------------------------------------

template <typename T>
class CovarModel {
public:
    explicit CovarModel(ModelConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        const int C = cfg_.hidden;
        t_fc1_.build(reg_, "t_embed.fc1", C, C);
        t_fc2_.build(reg_, "t_embed.fc2", C, C);
        text_emb_.build(reg_, "text.embed", cfg_.vocab, C);
        act_fc1_.build(reg_, "action_encoder.fc1", cfg_.action_dim, C);
        act_fc2_.build(reg_, "action_encoder.fc2", C, C);
        if (cfg_.video_branch) {
            patch_embed_.build(reg_, "video.patch_embed", cfg_.patch_dim(), C);
            final_mod_v_.build(reg_, "video.final_mod", C, 2 * C, nn::Init::Zero);
            video_head_.build(reg_, "video.head", C, cfg_.patch_dim(), nn::Init::Zero);
        }
        final_mod_a_.build(reg_, "action.final_mod", C, 2 * C, nn::Init::Zero);
        if (cfg_.decoder == DecoderKind::Unet)
            unet_.build(reg_, "action.unet", C, cfg_.action_dim);
        else
            dec_mlp_.build(reg_, "action.mlp", C, C, cfg_.action_dim, nn::Init::Zero);

        blocks_.resize(cfg_.block_pairs);
        for (int i = 0; i < cfg_.block_pairs; ++i) {
            const bool coupled = ((i + 1) % cfg_.bridge_interval) == 0;
            blocks_[i].build(reg_, "block" + std::to_string(i), cfg_, coupled);
        }
        ln_final_v_ = nn::LayerNorm<T>(C);
        ln_final_a_ = nn::LayerNorm<T>(C);

        pos_text_ = nn::pos_table_1d<T>(cfg_.text_len, C);
        pos_action_ = nn::pos_table_1d<T>(cfg_.action_tokens(), C);
        if (cfg_.video_branch)
            pos_video_ = nn::pos_table_spacetime<T>(cfg_.frames, cfg_.height / cfg_.patch,
                                                    cfg_.width / cfg_.patch, C);
        build_masks();
    }

    const ModelConfig& config() const { return cfg_; }
    nn::Registry<T>& registry() { return reg_; }
    const nn::Registry<T>& registry() const { return reg_; }

    std::vector<int> video_shape() const { return {cfg_.frames, 3, cfg_.height, cfg_.width}; }
    std::vector<int> action_shape() const { return {cfg_.frames, cfg_.action_dim}; }

    void init_weights(Rng& rng) { reg_.init_weights(rng); }

    // Force a block-diagonal joint-attention mask in every block (used to
    // check that bridge attention reduces to per-modality self-attention).
    void set_block_diagonal(bool on) { force_block_diag_ = on; }

    void impose(flow::JointState<T>& x, const Conditioning<T>& cond) const {
        std::copy(cond.initial_frame.v.begin(), cond.initial_frame.v.end(), x.video.v.begin());
    }

    flow::VelocityPair<T> forward(const flow::JointState<T>& noisy, double t,
                                  const Conditioning<T>& cond) {
        if (noisy.video.shape != video_shape() || noisy.action.shape != action_shape())
            throw std::invalid_argument("forward: input shapes do not match config");
        const int C = cfg_.hidden;

        // timestep embedding
        Tensor<T> sin_t({1, C});
        nn::sin_embed(t * 1000.0, sin_t.data(), C);
        t_pre_ = t_fc1_.forward(sin_t);
        Tensor<T> t_act({1, C});
        nn::silu(t_pre_.data(), t_act.data(), C);
        e_t_ = t_fc2_.forward(t_act);
        e_act_ = Tensor<T>({1, C});
        nn::silu(e_t_.data(), e_act_.data(), C);

        // text tokens
        std::vector<std::int32_t> ids = cond.tokens;
        ids.resize(cfg_.text_len, 0);
        txt_ = text_emb_.forward(ids);
        detail::add_inplace(txt_, pos_text_);

        // action tokens: conditioning token (a0) + one per step
        const int na = cfg_.action_tokens();
        Tensor<T> arows({na, cfg_.action_dim});
        for (int j = 0; j < cfg_.action_dim; ++j)
            arows[j] = cond.initial_action[j];
        std::copy(noisy.action.v.begin(), noisy.action.v.end(),
                  arows.v.begin() + cfg_.action_dim);
        act_pre_ = act_fc1_.forward(arows);
        Tensor<T> act_h(act_pre_.shape);
        kern::gelu(act_pre_.data(), act_h.data(), static_cast<int>(act_h.size()));
        f_a_ = act_fc2_.forward(act_h);
        detail::add_inplace(f_a_, pos_action_);

        // video tokens
        if (cfg_.video_branch) {
            Tensor<T> video = noisy.video;
            std::copy(cond.initial_frame.v.begin(), cond.initial_frame.v.end(),
                      video.v.begin());
            Tensor<T> raw = patchify(video);
            f_v_ = patch_embed_.forward(raw);
            detail::add_inplace(f_v_, pos_video_);
        } else {
            f_v_ = Tensor<T>();
        }

        for (auto& blk : blocks_) {
            const T* mask = nullptr;
            if (cfg_.video_branch && (cfg_.attn != AttnMode::Bridge || force_block_diag_ ||
                                      !blk.coupled))
                mask = block_diag_mask_.data();
            blk.forward(f_v_, f_a_, txt_, e_act_, mask);
        }

        flow::VelocityPair<T> out;
        if (cfg_.video_branch) {
            mod2_v_ = final_mod_v_.forward(e_act_);
            Tensor<T> hv = ln_final_v_.forward(f_v_, mod2_v_.data(), mod2_v_.data() + C);
            Tensor<T> pv = video_head_.forward(hv);
            out.video = unpatchify(pv);
        } else {
            out.video = Tensor<T>(video_shape());
        }

        mod2_a_ = final_mod_a_.forward(e_act_);
        Tensor<T> ha = ln_final_a_.forward(f_a_, mod2_a_.data(), mod2_a_.data() + C);
        // drop the conditioning token
        dec_in_ = Tensor<T>({cfg_.frames, C});
        std::copy(ha.v.begin() + C, ha.v.end(), dec_in_.v.begin());
        out.action = cfg_.decoder == DecoderKind::Unet ? unet_.forward(dec_in_)
                                                       : dec_mlp_.forward(dec_in_);
        out.action.shape = action_shape();

        check_finite(out);
        return out;
    }

    // Accumulates parameter gradients for the forward that just ran.
    void backward(const flow::VelocityPair<T>& dv) {
        const int C = cfg_.hidden;
        Tensor<T> de_act({1, C});

        // action head
        Tensor<T> ddec = cfg_.decoder == DecoderKind::Unet ? unet_.backward(dv.action)
                                                           : dec_mlp_.backward(dv.action);
        Tensor<T> dha({cfg_.action_tokens(), C});
        std::copy(ddec.v.begin(), ddec.v.end(), dha.v.begin() + C);
        Tensor<T> dmod2_a({1, 2 * C});
        Tensor<T> df_a =
            ln_final_a_.backward(dha, dmod2_a.data(), dmod2_a.data() + C);
        detail::add_inplace(de_act, final_mod_a_.backward(dmod2_a));

        // video head
        Tensor<T> df_v;
        if (cfg_.video_branch) {
            Tensor<T> dpv = patchify_grad(dv.video);
            Tensor<T> dhv = video_head_.backward(dpv);
            Tensor<T> dmod2_v({1, 2 * C});
            df_v = ln_final_v_.backward(dhv, dmod2_v.data(), dmod2_v.data() + C);
            detail::add_inplace(de_act, final_mod_v_.backward(dmod2_v));
        }

        Tensor<T> dtxt(txt_.shape);
        for (int i = cfg_.block_pairs - 1; i >= 0; --i)
            blocks_[i].backward(df_v, df_a, dtxt, de_act);

        // stems
        if (cfg_.video_branch)
            patch_embed_.backward(df_v);
        Tensor<T> dact_h = act_fc2_.backward(df_a);
        Tensor<T> dact_pre(act_pre_.shape);
        kern::gelu_grad(act_pre_.data(), dact_h.data(), dact_pre.data(),
                        static_cast<int>(dact_h.size()));
        act_fc1_.backward(dact_pre);
        text_emb_.backward(dtxt);

        // timestep pipeline
        Tensor<T> de_t({1, C});
        nn::silu_grad(e_t_.data(), de_act.data(), de_t.data(), C);
        Tensor<T> dt_act = t_fc2_.backward(de_t);
        Tensor<T> dt_pre({1, C});
        nn::silu_grad(t_pre_.data(), dt_act.data(), dt_pre.data(), C);
        t_fc1_.backward(dt_pre);
    }

    Tensor<T> patchify(const Tensor<T>& video) const {
        const int p = cfg_.patch, gh = cfg_.height / p, gw = cfg_.width / p;
        Tensor<T> out({cfg_.video_tokens(), cfg_.patch_dim()});
        std::size_t row = 0;
        for (int f = 0; f < cfg_.frames; ++f)
            for (int gy = 0; gy < gh; ++gy)
                for (int gx = 0; gx < gw; ++gx, ++row) {
                    T* dst = out.data() + row * cfg_.patch_dim();
                    for (int c = 0; c < 3; ++c)
                        for (int py = 0; py < p; ++py)
                            for (int px = 0; px < p; ++px)
                                *dst++ = video[(((static_cast<std::size_t>(f) * 3 + c) *
                                                     cfg_.height +
                                                 gy * p + py) *
                                                cfg_.width) +
                                               gx * p + px];
                }
        return out;
    }

    Tensor<T> unpatchify(const Tensor<T>& tokens) const {
        const int p = cfg_.patch, gh = cfg_.height / p, gw = cfg_.width / p;
        Tensor<T> out(video_shape());
        std::size_t row = 0;
        for (int f = 0; f < cfg_.frames; ++f)
            for (int gy = 0; gy < gh; ++gy)
                for (int gx = 0; gx < gw; ++gx, ++row) {
                    const T* src = tokens.data() + row * cfg_.patch_dim();
                    for (int c = 0; c < 3; ++c)
                        for (int py = 0; py < p; ++py)
                            for (int px = 0; px < p; ++px)
                                out[(((static_cast<std::size_t>(f) * 3 + c) * cfg_.height +
                                      gy * p + py) *
                                     cfg_.width) +
                                    gx * p + px] = *src++;
                }
        return out;
    }

    // patchify is an index permutation, so its gradient is the same gather.
    Tensor<T> patchify_grad(const Tensor<T>& dvideo) const { return patchify(dvideo); }

private:
    void build_masks() {
        if (!cfg_.video_branch)
            return;
        const int nv = cfg_.video_tokens(), na = cfg_.action_tokens();
        const int n = nv + na;
        block_diag_mask_ = Tensor<T>({n, n});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if ((i < nv) != (j < nv))
                    block_diag_mask_[static_cast<std::size_t>(i) * n + j] = T(-1e9);
    }

    void check_finite(const flow::VelocityPair<T>& out) const {
        if (!all_finite(out.video) || !all_finite(out.action))
            throw std::runtime_error("forward: non-finite activations in output head");
    }

    ModelConfig cfg_;
    nn::Registry<T> reg_;
    nn::Linear<T> t_fc1_, t_fc2_;
    nn::Embedding<T> text_emb_;
    nn::Linear<T> act_fc1_, act_fc2_;
    nn::Linear<T> patch_embed_;
    nn::Linear<T> final_mod_v_, final_mod_a_;
    nn::Linear<T> video_head_;
    nn::Mlp<T> dec_mlp_;
    UNet1d<T> unet_;
    std::vector<BlockPair<T>> blocks_;
    nn::LayerNorm<T> ln_final_v_, ln_final_a_;
    Tensor<T> pos_text_, pos_action_, pos_video_;
    Tensor<T> block_diag_mask_;
    bool force_block_diag_ = false;

    // forward caches
    Tensor<T> t_pre_, e_t_, e_act_, txt_, act_pre_, f_v_, f_a_, dec_in_, mod2_v_, mod2_a_;
};

} // namespace covar
