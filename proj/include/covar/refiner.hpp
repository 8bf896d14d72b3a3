// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "covar/model.hpp"
#include "covar/nn.hpp"
#include "covar/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

// Action refinement: a small transformer that maps coarse action sequences to
// precise ones. Action tokens are concatenated with patch tokens of the
// initial observation, run through self-attention, then cross-attend to the
// instruction. The decoder predicts a residual, so zeroed decoder weights
// leave the input unchanged.

namespace covar {

struct RefinerConfig {
    int hidden = 128;
    int heads = 4;
    int self_blocks = 2;
    int cross_blocks = 2;
    int patch = 8;
    int frames = 8;
    int height = 32;
    int width = 32;
    int action_dim = 3;
    int vocab = 32;
    int text_len = 8;
    // coarse-action curriculum
    double smooth_sigma = 0.15;
    double jitter_sigma = 0.1;
    double mix_model_fraction = 0.5;

    void validate() const {
        if (hidden <= 0 || heads <= 0 || self_blocks <= 0 || cross_blocks <= 0 || patch <= 0)
            throw std::invalid_argument("refiner config: non-positive dimension");
        if (hidden % heads != 0)
            throw std::invalid_argument("refiner config: heads must divide hidden");
        if (height % patch != 0 || width % patch != 0)
            throw std::invalid_argument("refiner config: patch must divide image");
        if (mix_model_fraction < 0.0 || mix_model_fraction > 1.0)
            throw std::invalid_argument("refiner config: mix fraction outside [0,1]");
        if (smooth_sigma < 0.0 || jitter_sigma < 0.0)
            throw std::invalid_argument("refiner config: negative noise sigma");
    }
};

namespace detail {

// Plain pre-norm transformer block (self- or cross-attention + MLP).
template <typename T>
struct RefBlock {
    nn::Linear<T> q, k, v, o;
    nn::AttentionCore<T> core;
    nn::LayerNorm<T> ln1, ln2, ln_kv;
    nn::Mlp<T> mlp;
    bool cross = false;

    void build(nn::Registry<T>& reg, const std::string& name, int dim, int heads,
               bool cross_attn) {
        cross = cross_attn;
        core = nn::AttentionCore<T>(dim, heads);
        ln1 = ln2 = ln_kv = nn::LayerNorm<T>(dim);
        q.build(reg, name + ".q", dim, dim);
        k.build(reg, name + ".k", dim, dim);
        v.build(reg, name + ".v", dim, dim);
        o.build(reg, name + ".o", dim, dim);
        mlp.build(reg, name + ".mlp", dim, 4 * dim, dim);
    }

    // ctx is ignored for self-attention blocks.
    void forward(Tensor<T>& f, const Tensor<T>& ctx) {
        Tensor<T> h = ln1.forward(f, nullptr, nullptr);
        Tensor<T> src = cross ? ln_kv.forward(ctx, nullptr, nullptr) : h;
        Tensor<T> attn =
            o.forward(core.forward(q.forward(h), k.forward(src), v.forward(src)));
        detail::add_inplace(f, attn);
        Tensor<T> h2 = ln2.forward(f, nullptr, nullptr);
        Tensor<T> m = mlp.forward(h2);
        detail::add_inplace(f, m);
    }

    // df is grad w.r.t. output, replaced by grad w.r.t. input; dctx accumulates.
    void backward(Tensor<T>& df, Tensor<T>& dctx) {
        Tensor<T> dh2 = mlp.backward(df);
        detail::add_inplace(df, ln2.backward(dh2, nullptr, nullptr));
        Tensor<T> dcore = o.backward(df);
        Tensor<T> dq, dk, dv;
        core.backward(dcore, dq, dk, dv);
        Tensor<T> dh = q.backward(dq);
        Tensor<T> dsrc = k.backward(dk);
        detail::add_inplace(dsrc, v.backward(dv));
        if (cross) {
            detail::add_inplace(dctx, ln_kv.backward(dsrc, nullptr, nullptr));
        } else {
            detail::add_inplace(dh, dsrc);
        }
        detail::add_inplace(df, ln1.backward(dh, nullptr, nullptr));
    }
};

} // namespace detail

template <typename T>
class Refiner {
public:
    explicit Refiner(RefinerConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        const int C = cfg_.hidden;
        act_embed_.build(reg_, "refiner.action_embed", cfg_.action_dim, C, C);
        img_embed_.build(reg_, "refiner.image_embed", 3 * cfg_.patch * cfg_.patch, C);
        text_emb_.build(reg_, "refiner.text_embed", cfg_.vocab, C);
        blocks_.resize(cfg_.self_blocks + cfg_.cross_blocks);
        for (int i = 0; i < cfg_.self_blocks; ++i)
            blocks_[i].build(reg_, "refiner.self" + std::to_string(i), C, cfg_.heads, false);
        for (int i = 0; i < cfg_.cross_blocks; ++i)
            blocks_[cfg_.self_blocks + i].build(reg_, "refiner.cross" + std::to_string(i), C,
                                                cfg_.heads, true);
        ln_out_ = nn::LayerNorm<T>(C);
        dec_.build(reg_, "refiner.decoder", C, C, cfg_.action_dim, nn::Init::Zero);
        pos_act_ = nn::pos_table_1d<T>(cfg_.frames, C);
        const int gh = cfg_.height / cfg_.patch, gw = cfg_.width / cfg_.patch;
        pos_img_ = nn::pos_table_spacetime<T>(1, gh, gw, C);
        pos_text_ = nn::pos_table_1d<T>(cfg_.text_len, C);
    }

    const RefinerConfig& config() const { return cfg_; }
    nn::Registry<T>& registry() { return reg_; }
    const nn::Registry<T>& registry() const { return reg_; }
    void init_weights(Rng& rng) { reg_.init_weights(rng); }

    Tensor<T> refine(const Tensor<T>& coarse, const Conditioning<T>& cond) {
        if (coarse.shape != std::vector<int>{cfg_.frames, cfg_.action_dim})
            throw std::invalid_argument("refine: coarse shape mismatch");
        if (!all_finite(coarse) || !all_finite(cond.initial_frame))
            throw std::invalid_argument("refine: non-finite input");
        const int C = cfg_.hidden;
        const int na = cfg_.frames;

        Tensor<T> fa = act_embed_.forward(coarse);
        detail::add_inplace(fa, pos_act_);
        Tensor<T> patches = patchify_frame(cond.initial_frame);
        Tensor<T> fi = img_embed_.forward(patches);
        detail::add_inplace(fi, pos_img_);
        f_ = detail::concat_rows(fa, fi, C);

        std::vector<std::int32_t> ids = cond.tokens;
        ids.resize(cfg_.text_len, 0);
        txt_ = text_emb_.forward(ids);
        detail::add_inplace(txt_, pos_text_);

        for (auto& blk : blocks_)
            blk.forward(f_, txt_);

        Tensor<T> acts({na, C});
        std::copy_n(f_.v.begin(), acts.size(), acts.v.begin());
        Tensor<T> h = ln_out_.forward(acts, nullptr, nullptr);
        Tensor<T> res = dec_.forward(h);
        Tensor<T> out = coarse;
        detail::add_inplace(out, res);
        return out;
    }

    // Gradient of the forward that just ran; dout is grad w.r.t. refined actions.
    void backward(const Tensor<T>& dout) {
        const int C = cfg_.hidden;
        const int na = cfg_.frames;
        Tensor<T> dh = dec_.backward(dout);
        Tensor<T> dacts = ln_out_.backward(dh, nullptr, nullptr);
        Tensor<T> df(f_.shape);
        std::copy(dacts.v.begin(), dacts.v.end(), df.v.begin());
        Tensor<T> dtxt(txt_.shape);
        for (int i = static_cast<int>(blocks_.size()) - 1; i >= 0; --i)
            blocks_[i].backward(df, dtxt);
        Tensor<T> dfa({na, C}), dfi({static_cast<int>(f_.shape[0]) - na, C});
        detail::split_rows(df, dfa, dfi, na, C);
        act_embed_.backward(dfa);
        img_embed_.backward(dfi);
        text_emb_.backward(dtxt);
    }

    Tensor<T> patchify_frame(const Tensor<T>& frame) const {
        const int p = cfg_.patch, gh = cfg_.height / p, gw = cfg_.width / p;
        Tensor<T> out({gh * gw, 3 * p * p});
        std::size_t row = 0;
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx, ++row) {
                T* dst = out.data() + row * 3 * p * p;
                for (int c = 0; c < 3; ++c)
                    for (int py = 0; py < p; ++py)
                        for (int px = 0; px < p; ++px)
                            *dst++ = frame[((static_cast<std::size_t>(c) * cfg_.height +
                                             gy * p + py) *
                                            cfg_.width) +
                                           gx * p + px];
            }
        return out;
    }

private:
    RefinerConfig cfg_;
    nn::Registry<T> reg_;
    nn::Mlp<T> act_embed_;
    nn::Linear<T> img_embed_;
    nn::Embedding<T> text_emb_;
    std::vector<detail::RefBlock<T>> blocks_;
    nn::LayerNorm<T> ln_out_;
    nn::Mlp<T> dec_;
    Tensor<T> pos_act_, pos_img_, pos_text_;
    Tensor<T> f_, txt_;
};

// Synthetic coarse-action curriculum: time-smoothed, jittered copies of the
// expert sequence. The model-sample channel (mix_model_fraction) is supplied
// by the trainer, which swaps in actual samples when a checkpoint exists.
template <typename T>
Tensor<T> make_coarse(const Tensor<T>& target, Rng& rng, const RefinerConfig& cfg) {
    if (!all_finite(target))
        throw std::invalid_argument("make_coarse: non-finite target");
    const int n = target.shape[0], l = target.shape[1];
    Tensor<T> coarse(target.shape);
    const double sigma = cfg.smooth_sigma * n;
    if (sigma > 0.0) {
        // Gaussian low-pass along time
        const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
        std::vector<double> kern(2 * radius + 1);
        double sum = 0.0;
        for (int i = -radius; i <= radius; ++i)
            sum += kern[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        for (double& x : kern)
            x /= sum;
        for (int t = 0; t < n; ++t)
            for (int j = 0; j < l; ++j) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const int s = std::clamp(t + i, 0, n - 1);
                    acc += kern[i + radius] *
                           static_cast<double>(target[static_cast<std::size_t>(s) * l + j]);
                }
                coarse[static_cast<std::size_t>(t) * l + j] = static_cast<T>(acc);
            }
    } else {
        coarse = target;
    }
    if (cfg.jitter_sigma > 0.0)
        for (auto& x : coarse.v)
            x += static_cast<T>(cfg.jitter_sigma * rng.normal());
    return coarse;
}

// Mean squared error over all elements.
template <typename T>
double refiner_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (!pred.same_shape(target))
        throw std::invalid_argument("refiner_loss: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

template <typename T>
void refiner_loss_backward(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>& dpred) {
    dpred = Tensor<T>(pred.shape);
    const T scale = static_cast<T>(2.0 / static_cast<double>(pred.size()));
    for (std::size_t i = 0; i < pred.size(); ++i)
        dpred[i] = scale * (pred[i] - target[i]);
}

} // namespace covar
