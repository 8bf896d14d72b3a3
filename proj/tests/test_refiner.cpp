// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "covar/refiner.hpp"
#include "covar/rng.hpp"

#include <cmath>
#include <complex>
#include <vector>

using namespace covar;

namespace {

RefinerConfig tiny_config() {
    RefinerConfig cfg;
    cfg.hidden = 16;
    cfg.heads = 2;
    cfg.self_blocks = 1;
    cfg.cross_blocks = 1;
    cfg.patch = 8;
    cfg.frames = 8;
    cfg.height = 16;
    cfg.width = 16;
    cfg.vocab = 24;
    return cfg;
}

template <typename T>
Conditioning<T> random_cond(const RefinerConfig& cfg, Rng& rng) {
    Conditioning<T> cond;
    cond.initial_frame = Tensor<T>({3, cfg.height, cfg.width});
    for (auto& x : cond.initial_frame.v)
        x = static_cast<T>(rng.uniform());
    cond.initial_action = {T(0), T(0), T(0)};
    cond.tokens = {1, 2, 3, 4, 0, 0, 0, 0};
    return cond;
}

// Energy above the lowest quarter of the discrete spectrum, per channel.
double high_freq_energy(const Tensor<float>& x) {
    const int n = x.shape[0], l = x.shape[1];
    double e = 0.0;
    for (int j = 0; j < l; ++j)
        for (int k = n / 4; k <= n / 2; ++k) {
            std::complex<double> acc(0, 0);
            for (int t = 0; t < n; ++t)
                acc += std::polar(static_cast<double>(x[t * l + j]),
                                  -2.0 * 3.14159265358979323846 * k * t / n);
            e += std::norm(acc);
        }
    return e;
}

} // namespace

TEST_CASE("refiner with zero decoder is the identity") {
    auto cfg = tiny_config();
    Refiner<float> ref(cfg);
    Rng rng(1);
    ref.init_weights(rng); // decoder output layer is zero-initialized

    Tensor<float> coarse({cfg.frames, cfg.action_dim});
    flow::fill_normal(coarse, rng);
    auto cond = random_cond<float>(cfg, rng);
    auto out = ref.refine(coarse, cond);
    for (std::size_t i = 0; i < coarse.size(); ++i)
        CHECK(out[i] == coarse[i]);
}

TEST_CASE("refiner output shape and input validation") {
    auto cfg = tiny_config();
    Refiner<float> ref(cfg);
    Rng rng(2);
    ref.init_weights(rng);
    auto cond = random_cond<float>(cfg, rng);
    Tensor<float> wrong({cfg.frames + 1, cfg.action_dim});
    CHECK_THROWS(ref.refine(wrong, cond));
    Tensor<float> coarse({cfg.frames, cfg.action_dim});
    coarse[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS(ref.refine(coarse, cond));
}

TEST_CASE("make_coarse: passthrough, determinism, and low-pass behaviour") {
    Rng rng(3);
    Tensor<float> target({8, 3});
    // a deliberately wiggly sequence
    for (int t = 0; t < 8; ++t)
        for (int j = 0; j < 3; ++j)
            target[t * 3 + j] =
                static_cast<float>(std::sin(2.1 * t + j) + 0.5 * std::cos(5.0 * t));

    auto cfg = tiny_config();
    SUBCASE("all-zero curriculum is the identity") {
        cfg.smooth_sigma = 0.0;
        cfg.jitter_sigma = 0.0;
        cfg.mix_model_fraction = 0.0;
        auto c = make_coarse(target, rng, cfg);
        CHECK(c.v == target.v);
    }
    SUBCASE("same seed, same coarse") {
        Rng a(9), b(9);
        auto c1 = make_coarse(target, a, cfg);
        auto c2 = make_coarse(target, b, cfg);
        CHECK(c1.v == c2.v);
    }
    SUBCASE("smoothing strictly reduces high-frequency energy") {
        cfg.jitter_sigma = 0.0;
        auto c = make_coarse(target, rng, cfg);
        CHECK(high_freq_energy(c) < high_freq_energy(target));
    }
}

TEST_CASE("refiner loss oracles") {
    Rng rng(4);
    Tensor<float> t({8, 3});
    flow::fill_normal(t, rng);
    CHECK(refiner_loss(t, t) == 0.0);
    Tensor<float> p = t;
    for (auto& x : p.v)
        x += 1.0f;
    CHECK(refiner_loss(p, t) == doctest::Approx(1.0).epsilon(1e-6));
    // brute force on a random pair
    Tensor<float> q({8, 3});
    flow::fill_normal(q, rng);
    double acc = 0;
    for (std::size_t i = 0; i < q.size(); ++i)
        acc += (q[i] - t[i]) * (q[i] - t[i]);
    CHECK(refiner_loss(q, t) == doctest::Approx(acc / q.size()).epsilon(1e-6));
    Tensor<float> bad({7, 3});
    CHECK_THROWS(refiner_loss(bad, t));
}

TEST_CASE("refiner gradient check in double precision") {
    auto cfg = tiny_config();
    Refiner<double> ref(cfg);
    Rng rng(5);
    ref.init_weights(rng);
    // zero-init decoder blocks all gradient flow; give it small weights
    for (auto& p : ref.registry().params())
        if (p->name == "refiner.decoder.fc2.weight")
            for (auto& w : p->w)
                w = 0.01 * rng.normal();

    Tensor<double> coarse({cfg.frames, cfg.action_dim});
    flow::fill_normal(coarse, rng);
    auto cond = random_cond<double>(cfg, rng);
    Tensor<double> target({cfg.frames, cfg.action_dim});
    flow::fill_normal(target, rng);

    ref.registry().zero_grad();
    auto pred = ref.refine(coarse, cond);
    Tensor<double> dpred;
    refiner_loss_backward(pred, target, dpred);
    ref.backward(dpred);

    Rng pick(55);
    const double h = 1e-5;
    double worst = 0.0;
    for (auto& p : ref.registry().params()) {
        for (int r = 0; r < 2; ++r) {
            const std::size_t i = pick.below(p->w.size());
            const double keep = p->w[i];
            p->w[i] = keep + h;
            const double up = refiner_loss(ref.refine(coarse, cond), target);
            p->w[i] = keep - h;
            const double dn = refiner_loss(ref.refine(coarse, cond), target);
            p->w[i] = keep;
            const double num = (up - dn) / (2 * h);
            const double ana = p->g[i];
            const double denom = std::max({std::abs(num), std::abs(ana), 1e-6});
            worst = std::max(worst, std::abs(num - ana) / denom);
        }
    }
    CHECK(worst < 1e-3);
}
