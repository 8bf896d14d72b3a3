// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#include "covar/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace covar {

namespace {

constexpr double kPsnrCap = 100.0;

double frame_psnr(const float* a, const float* b, std::size_t n) {
    double mse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(n);
    if (mse <= 0.0)
        return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

// SSIM of one channel plane with a uniform 7x7 window.
double plane_ssim(const float* a, const float* b, int h, int w) {
    constexpr int win = 7;
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const int nw = win * win;
    double acc = 0.0;
    int count = 0;
    for (int y = 0; y + win <= h; ++y) {
        for (int x = 0; x + win <= w; ++x) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int dy = 0; dy < win; ++dy)
                for (int dx = 0; dx < win; ++dx) {
                    const double va = a[(y + dy) * w + x + dx];
                    const double vb = b[(y + dy) * w + x + dx];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            const double mua = sa / nw, mub = sb / nw;
            const double vara = saa / nw - mua * mua;
            const double varb = sbb / nw - mub * mub;
            const double cov = sab / nw - mua * mub;
            acc += ((2 * mua * mub + c1) * (2 * cov + c2)) /
                   ((mua * mua + mub * mub + c1) * (vara + varb + c2));
            ++count;
        }
    }
    return acc / count;
}

void infer_dims(const Tensor<float>& a, int& frames, int& h, int& w) {
    if (a.shape.size() == 4 && a.shape[1] == 3) {
        frames = a.shape[0];
        h = a.shape[2];
        w = a.shape[3];
    } else if (a.shape.size() == 3 && a.shape[0] == 3) {
        frames = 1;
        h = a.shape[1];
        w = a.shape[2];
    } else {
        throw std::invalid_argument("metrics: expected [3,H,W] or [T,3,H,W]");
    }
}

} // namespace

double psnr(const Tensor<float>& a, const Tensor<float>& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("psnr: shape mismatch");
    int frames, h, w;
    infer_dims(a, frames, h, w);
    const std::size_t per = static_cast<std::size_t>(3) * h * w;
    double acc = 0.0;
    for (int f = 0; f < frames; ++f)
        acc += frame_psnr(a.data() + f * per, b.data() + f * per, per);
    return acc / frames;
}

double ssim(const Tensor<float>& a, const Tensor<float>& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("ssim: shape mismatch");
    int frames, h, w;
    infer_dims(a, frames, h, w);
    if (h < 7 || w < 7)
        throw std::invalid_argument("ssim: image smaller than 7x7 window");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    double acc = 0.0;
    for (int f = 0; f < frames; ++f)
        for (int c = 0; c < 3; ++c) {
            const std::size_t off = (static_cast<std::size_t>(f) * 3 + c) * plane;
            acc += plane_ssim(a.data() + off, b.data() + off, h, w);
        }
    return acc / (3.0 * frames);
}

ActionError action_errors(const Tensor<float>& pred, const Tensor<float>& gt) {
    if (!pred.same_shape(gt))
        throw std::invalid_argument("action_errors: shape mismatch");
    ActionError e;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
        e.mse += d * d;
    }
    e.mse /= static_cast<double>(pred.size());
    const int t = pred.shape[0], l = pred.shape[1];
    const std::size_t last = static_cast<std::size_t>(t - 1) * l;
    const double dx = static_cast<double>(pred[last]) - static_cast<double>(gt[last]);
    const double dy = static_cast<double>(pred[last + 1]) - static_cast<double>(gt[last + 1]);
    e.final_pos_error = std::sqrt(dx * dx + dy * dy);
    return e;
}

} // namespace covar
