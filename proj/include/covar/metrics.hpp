// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "covar/tensor.hpp"

namespace covar {

// PSNR in dB for signals in [0,1] (MAX = 1). For [T,3,H,W] inputs the value
// is computed per frame and averaged; a zero-MSE frame contributes the
// 100 dB cap. Also accepts a single [3,H,W] frame.
double psnr(const Tensor<float>& a, const Tensor<float>& b);

// Mean SSIM over a 7x7 uniform window, computed per channel and averaged,
// C1 = 0.01^2, C2 = 0.03^2, dynamic range 1. Accepts [3,H,W] or [T,3,H,W]
// (averaged over frames). Throws if the image is smaller than the window.
double ssim(const Tensor<float>& a, const Tensor<float>& b);

struct ActionError {
    double mse = 0.0;
    double final_pos_error = 0.0; // Euclidean (x,y) distance at the last step
};

// pred/gt: [T, L], first two channels are the effector position.
ActionError action_errors(const Tensor<float>& pred, const Tensor<float>& gt);

} // namespace covar
