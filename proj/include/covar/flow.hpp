// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "covar/rng.hpp"
#include "covar/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

// Rectified-flow math for the joint (video, action) process: linear
// interpolation path, velocity targets, the two-term masked MSE training
// loss, timestep sampling, and the Euler sampler.

namespace covar::flow {

template <typename T>
struct JointState {
    Tensor<T> video;  // T x 3 x H x W
    Tensor<T> action; // T x L
    double t = 0.0;
};

template <typename T>
struct VelocityPair {
    Tensor<T> video;
    Tensor<T> action;
};

// Frame-level loss masks; a disabled modality contributes nothing.
struct LossMask {
    std::vector<std::uint8_t> video_frames;
    std::vector<std::uint8_t> action_steps;
    bool video_enabled = true;
    bool action_enabled = true;

    // Default training mask: frame 0 is the conditioning frame and is
    // excluded from the video loss.
    static LossMask training(int frames, bool video_on, bool action_on) {
        LossMask m;
        m.video_frames.assign(frames, 1);
        if (frames > 0)
            m.video_frames[0] = 0;
        m.action_steps.assign(frames, 1);
        m.video_enabled = video_on;
        m.action_enabled = action_on;
        return m;
    }
    static LossMask full(int frames) {
        LossMask m;
        m.video_frames.assign(frames, 1);
        m.action_steps.assign(frames, 1);
        return m;
    }
};

template <typename T>
JointState<T> interpolate(const JointState<T>& x0, const JointState<T>& x1, double t) {
    if (!x0.video.same_shape(x1.video) || !x0.action.same_shape(x1.action))
        throw std::invalid_argument("interpolate: shape mismatch");
    if (t < 0.0 || t > 1.0)
        throw std::invalid_argument("interpolate: t outside [0,1]");
    JointState<T> out;
    out.t = t;
    out.video = x0.video;
    out.action = x0.action;
    // convex form so t = 0 and t = 1 hit the endpoints exactly
    const T tt = static_cast<T>(t);
    const T s = T(1) - tt;
    for (std::size_t i = 0; i < out.video.size(); ++i)
        out.video[i] = s * x0.video[i] + tt * x1.video[i];
    for (std::size_t i = 0; i < out.action.size(); ++i)
        out.action[i] = s * x0.action[i] + tt * x1.action[i];
    return out;
}

// dX_t/dt of the straight path; independent of t.
template <typename T>
VelocityPair<T> velocity_target(const JointState<T>& x0, const JointState<T>& x1) {
    if (!x0.video.same_shape(x1.video) || !x0.action.same_shape(x1.action))
        throw std::invalid_argument("velocity_target: shape mismatch");
    VelocityPair<T> v;
    v.video = x1.video;
    v.action = x1.action;
    for (std::size_t i = 0; i < v.video.size(); ++i)
        v.video[i] -= x0.video[i];
    for (std::size_t i = 0; i < v.action.size(); ++i)
        v.action[i] -= x0.action[i];
    return v;
}

namespace detail {

// Masked per-element MSE over one modality. elems = elements per frame/step.
template <typename T>
double masked_mse(const Tensor<T>& pred, const Tensor<T>& target,
                  const std::vector<std::uint8_t>& mask, const char* what) {
    if (!pred.same_shape(target))
        throw std::invalid_argument(std::string("flow_loss: shape mismatch in ") + what);
    const int frames = pred.shape[0];
    if (static_cast<int>(mask.size()) != frames)
        throw std::invalid_argument(std::string("flow_loss: mask length mismatch in ") + what);
    const std::size_t elems = pred.size() / static_cast<std::size_t>(frames);
    std::size_t active = 0;
    double acc = 0.0;
    for (int f = 0; f < frames; ++f) {
        if (!mask[f])
            continue;
        ++active;
        const std::size_t off = static_cast<std::size_t>(f) * elems;
        for (std::size_t i = 0; i < elems; ++i) {
            const double d = static_cast<double>(pred[off + i]) - static_cast<double>(target[off + i]);
            acc += d * d;
        }
    }
    if (active == 0)
        throw std::invalid_argument(std::string("flow_loss: fully masked modality ") + what);
    return acc / (static_cast<double>(active) * static_cast<double>(elems));
}

template <typename T>
void masked_mse_grad(const Tensor<T>& pred, const Tensor<T>& target,
                     const std::vector<std::uint8_t>& mask, double scale, Tensor<T>& dpred) {
    const int frames = pred.shape[0];
    const std::size_t elems = pred.size() / static_cast<std::size_t>(frames);
    std::size_t active = 0;
    for (std::uint8_t m : mask)
        active += m ? 1 : 0;
    const T c = static_cast<T>(2.0 * scale / (static_cast<double>(active) * static_cast<double>(elems)));
    for (int f = 0; f < frames; ++f) {
        if (!mask[f])
            continue;
        const std::size_t off = static_cast<std::size_t>(f) * elems;
        for (std::size_t i = 0; i < elems; ++i)
            dpred[off + i] += c * (pred[off + i] - target[off + i]);
    }
}

} // namespace detail

// L = MSE_video(masked) + MSE_action(masked), unit weights per modality.
template <typename T>
double flow_loss(const VelocityPair<T>& pred, const VelocityPair<T>& target, const LossMask& mask,
                 double w_video = 1.0, double w_action = 1.0) {
    double loss = 0.0;
    if (mask.video_enabled)
        loss += w_video * detail::masked_mse(pred.video, target.video, mask.video_frames, "video");
    if (mask.action_enabled)
        loss += w_action * detail::masked_mse(pred.action, target.action, mask.action_steps, "action");
    return loss;
}

// dL/dpred, accumulated into grad (same shapes as pred).
template <typename T>
void flow_loss_backward(const VelocityPair<T>& pred, const VelocityPair<T>& target,
                        const LossMask& mask, VelocityPair<T>& grad, double w_video = 1.0,
                        double w_action = 1.0) {
    if (mask.video_enabled)
        detail::masked_mse_grad(pred.video, target.video, mask.video_frames, w_video, grad.video);
    if (mask.action_enabled)
        detail::masked_mse_grad(pred.action, target.action, mask.action_steps, w_action, grad.action);
}

inline std::vector<double> sample_timestep(int batch, Rng& rng) {
    if (batch < 1)
        throw std::invalid_argument("sample_timestep: batch must be >= 1");
    std::vector<double> t(batch);
    for (double& x : t)
        x = rng.uniform();
    return t;
}

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng) {
    for (auto& x : t.v)
        x = static_cast<T>(rng.normal());
}

// Euler integration of the learned field from t=1 (noise) down to t=0.
// Model must provide:
//   VelocityPair<T> forward(const JointState<T>&, double t, const Cond&)
//   void impose(JointState<T>&, const Cond&)   - write conditioning slots
//   video/action shapes via video_shape()/action_shape()
template <typename T, typename Model, typename Cond>
JointState<T> euler_sample(Model& model, const Cond& cond, int steps, Rng& rng) {
    if (steps < 1)
        throw std::invalid_argument("euler_sample: steps must be >= 1");
    JointState<T> x;
    x.video = Tensor<T>(model.video_shape());
    x.action = Tensor<T>(model.action_shape());
    fill_normal(x.video, rng);
    fill_normal(x.action, rng);
    x.t = 1.0;

    const double dt = 1.0 / steps;
    for (int s = 0; s < steps; ++s) {
        model.impose(x, cond);
        const VelocityPair<T> v = model.forward(x, x.t, cond);
        if (!all_finite(v.video) || !all_finite(v.action))
            throw std::runtime_error("euler_sample: non-finite velocity at step " +
                                     std::to_string(s));
        const T d = static_cast<T>(dt);
        for (std::size_t i = 0; i < x.video.size(); ++i)
            x.video[i] -= d * v.video[i];
        for (std::size_t i = 0; i < x.action.size(); ++i)
            x.action[i] -= d * v.action[i];
        x.t -= dt;
    }
    x.t = 0.0;
    model.impose(x, cond);
    return x;
}

} // namespace covar::flow
