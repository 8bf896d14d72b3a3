// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "covar/metrics.hpp"
#include "covar/rng.hpp"

#include <cmath>

using namespace covar;

namespace {

Tensor<float> random_image(Rng& rng, int frames = 2, int h = 32, int w = 32) {
    Tensor<float> t({frames, 3, h, w});
    for (auto& x : t.v)
        x = static_cast<float>(rng.uniform());
    return t;
}

Tensor<float> add_noise(const Tensor<float>& img, double sigma, Rng& rng) {
    Tensor<float> out = img;
    for (auto& x : out.v)
        x = std::clamp(x + static_cast<float>(sigma * rng.normal()), 0.0f, 1.0f);
    return out;
}

} // namespace

TEST_CASE("psnr identity cap and analytic value") {
    Rng rng(1);
    auto img = random_image(rng);
    CHECK(psnr(img, img) == 100.0);

    // constant squared error of 0.01 -> exactly 20 dB
    Tensor<float> a({1, 3, 32, 32}), b({1, 3, 32, 32});
    a.fill(0.5f);
    b.fill(0.6f);
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-4));
}

TEST_CASE("ssim identity and closed-form constant case") {
    Rng rng(2);
    auto img = random_image(rng);
    CHECK(ssim(img, img) == doctest::Approx(1.0).epsilon(1e-6));

    // constant 0 vs constant 1: means 0/1, zero variances
    Tensor<float> a({3, 32, 32}), b({3, 32, 32});
    a.fill(0.0f);
    b.fill(1.0f);
    const double c1 = 1e-4, c2 = 9e-4;
    const double expect = (c1 * c2) / ((1.0 + c1) * c2);
    CHECK(ssim(a, b) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("psnr and ssim strictly decrease with noise amplitude") {
    Rng rng(3);
    const double sigmas[3] = {0.01, 0.05, 0.1};
    int psnr_ok = 0, ssim_ok = 0, total = 0;
    for (int pair = 0; pair < 100; ++pair) {
        auto img = random_image(rng, 1);
        double prev_psnr = 1e9, prev_ssim = 1e9;
        bool p_dec = true, s_dec = true;
        for (double s : sigmas) {
            auto noisy = add_noise(img, s, rng);
            const double p = psnr(img, noisy);
            const double m = ssim(img, noisy);
            p_dec = p_dec && p < prev_psnr;
            s_dec = s_dec && m < prev_ssim;
            prev_psnr = p;
            prev_ssim = m;
        }
        psnr_ok += p_dec;
        ssim_ok += s_dec;
        ++total;
    }
    CHECK(psnr_ok == total);
    CHECK(ssim_ok == total);
}

TEST_CASE("ssim matches an independent reimplementation") {
    // direct translation of the SSIM definition, written without reference
    // to the library version
    auto naive = [](const Tensor<float>& a, const Tensor<float>& b) {
        const int h = a.shape[1], w = a.shape[2];
        double total = 0.0;
        int n = 0;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y + 7 <= h; ++y)
                for (int x = 0; x + 7 <= w; ++x) {
                    double ma = 0, mb = 0;
                    for (int i = 0; i < 7; ++i)
                        for (int j = 0; j < 7; ++j) {
                            ma += a[(c * h + y + i) * w + x + j];
                            mb += b[(c * h + y + i) * w + x + j];
                        }
                    ma /= 49;
                    mb /= 49;
                    double va = 0, vb = 0, cov = 0;
                    for (int i = 0; i < 7; ++i)
                        for (int j = 0; j < 7; ++j) {
                            const double da = a[(c * h + y + i) * w + x + j] - ma;
                            const double db = b[(c * h + y + i) * w + x + j] - mb;
                            va += da * da;
                            vb += db * db;
                            cov += da * db;
                        }
                    va /= 49;
                    vb /= 49;
                    cov /= 49;
                    total += (2 * ma * mb + 1e-4) * (2 * cov + 9e-4) /
                             ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
                    ++n;
                }
        return total / n;
    };

    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<float> a({3, 16, 16}), b({3, 16, 16});
        for (auto& x : a.v)
            x = static_cast<float>(rng.uniform());
        for (auto& x : b.v)
            x = static_cast<float>(rng.uniform());
        CHECK(ssim(a, b) == doctest::Approx(naive(a, b)).epsilon(1e-6));
    }
}

TEST_CASE("ssim rejects images smaller than the window") {
    Tensor<float> a({3, 6, 6}), b({3, 6, 6});
    CHECK_THROWS(ssim(a, b));
}

TEST_CASE("action error oracle values") {
    Tensor<float> gt({4, 3});
    Rng rng(5);
    for (auto& x : gt.v)
        x = static_cast<float>(rng.normal());
    auto e0 = action_errors(gt, gt);
    CHECK(e0.mse == 0.0);
    CHECK(e0.final_pos_error == 0.0);

    // 3-4-5 triangle at the final step
    Tensor<float> pred = gt;
    pred[3 * 3 + 0] += 0.3f;
    pred[3 * 3 + 1] += 0.4f;
    auto e = action_errors(pred, gt);
    CHECK(e.final_pos_error == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(e.mse == doctest::Approx((0.09 + 0.16) / 12.0).epsilon(1e-4));
}
