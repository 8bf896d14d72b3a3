// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "covar/flow.hpp"
#include "covar/rng.hpp"

#include <cmath>

using namespace covar;

namespace {

template <typename T>
flow::JointState<T> random_state(Rng& rng, double t) {
    flow::JointState<T> s;
    s.video = Tensor<T>({2, 3, 4, 4});
    s.action = Tensor<T>({2, 3});
    flow::fill_normal(s.video, rng);
    flow::fill_normal(s.action, rng);
    s.t = t;
    return s;
}

} // namespace

TEST_CASE("interpolate endpoints and midpoint") {
    Rng rng(7);
    auto x0 = random_state<double>(rng, 0.0);
    auto x1 = random_state<double>(rng, 0.0);
    auto at0 = flow::interpolate(x0, x1, 0.0);
    auto at1 = flow::interpolate(x0, x1, 1.0);
    auto mid = flow::interpolate(x0, x1, 0.5);
    for (std::size_t i = 0; i < x0.video.size(); ++i) {
        CHECK(at0.video[i] == x0.video[i]);
        CHECK(at1.video[i] == x1.video[i]);
        CHECK(mid.video[i] == doctest::Approx(0.5 * (x0.video[i] + x1.video[i])));
    }
    for (std::size_t i = 0; i < x0.action.size(); ++i) {
        CHECK(at0.action[i] == x0.action[i]);
        CHECK(at1.action[i] == x1.action[i]);
    }
    CHECK_THROWS(flow::interpolate(x0, x1, -0.1));
    CHECK_THROWS(flow::interpolate(x0, x1, 1.1));
}

TEST_CASE("velocity target is the straight-line displacement") {
    Rng rng(8);
    auto x0 = random_state<double>(rng, 0.0);
    auto x1 = random_state<double>(rng, 0.0);
    auto v = flow::velocity_target(x0, x1);
    for (std::size_t i = 0; i < x0.video.size(); ++i)
        CHECK(v.video[i] == x1.video[i] - x0.video[i]);
    for (std::size_t i = 0; i < x0.action.size(); ++i)
        CHECK(v.action[i] == x1.action[i] - x0.action[i]);
}

TEST_CASE("flow_loss optimum and brute-force oracle") {
    Rng rng(9);
    auto x0 = random_state<double>(rng, 0.0);
    auto x1 = random_state<double>(rng, 0.0);
    auto target = flow::velocity_target(x0, x1);
    auto mask = flow::LossMask::training(2, true, true);

    // pred = target -> exactly zero
    CHECK(flow::flow_loss(target, target, mask) == 0.0);

    // pred = 0 -> masked mean of target^2 per modality, summed
    flow::VelocityPair<double> zero;
    zero.video = Tensor<double>(target.video.shape);
    zero.action = Tensor<double>(target.action.shape);
    double vid = 0.0;
    std::size_t nvid = 0;
    const std::size_t per_frame = target.video.size() / 2;
    for (std::size_t i = 0; i < target.video.size(); ++i) {
        if (i / per_frame == 0)
            continue; // frame 0 masked
        vid += target.video[i] * target.video[i];
        ++nvid;
    }
    double act = 0.0;
    for (std::size_t i = 0; i < target.action.size(); ++i)
        act += target.action[i] * target.action[i];
    const double expect = vid / static_cast<double>(nvid) +
                          act / static_cast<double>(target.action.size());
    CHECK(flow::flow_loss(zero, target, mask) == doctest::Approx(expect).epsilon(1e-12));

    // disabled modality contributes nothing
    auto action_only = flow::LossMask::training(2, false, true);
    CHECK(flow::flow_loss(zero, target, action_only) ==
          doctest::Approx(act / static_cast<double>(target.action.size())).epsilon(1e-12));
}

TEST_CASE("flow_loss_backward matches finite differences") {
    Rng rng(10);
    auto x0 = random_state<double>(rng, 0.0);
    auto x1 = random_state<double>(rng, 0.0);
    auto target = flow::velocity_target(x0, x1);
    auto mask = flow::LossMask::training(2, true, true);
    auto pred = flow::velocity_target(x1, x0); // arbitrary wrong prediction

    flow::VelocityPair<double> grad;
    grad.video = Tensor<double>(pred.video.shape);
    grad.action = Tensor<double>(pred.action.shape);
    flow::flow_loss_backward(pred, target, mask, grad);

    const double h = 1e-6;
    for (std::size_t i : {std::size_t(0), pred.video.size() / 2, pred.video.size() - 1}) {
        auto p = pred;
        p.video[i] += h;
        const double up = flow::flow_loss(p, target, mask);
        p.video[i] -= 2 * h;
        const double dn = flow::flow_loss(p, target, mask);
        CHECK(grad.video[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
    }
    for (std::size_t i : {std::size_t(0), pred.action.size() - 1}) {
        auto p = pred;
        p.action[i] += h;
        const double up = flow::flow_loss(p, target, mask);
        p.action[i] -= 2 * h;
        const double dn = flow::flow_loss(p, target, mask);
        CHECK(grad.action[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
    }
}

namespace {

// A field with constant velocity v = x1 - x0 recovers x0 exactly for any
// Euler step count, since the path is a straight line.
template <typename T>
struct ConstField {
    flow::VelocityPair<T> vel;
    void impose(flow::JointState<T>&, int) const {}
    flow::VelocityPair<T> forward(const flow::JointState<T>&, double, int) { return vel; }
};

} // namespace

TEST_CASE("euler_sample recovers x0 under a constant oracle field") {
    for (int steps : {1, 7, 30}) {
        Rng rng(42); // same noise stream per steps value
        auto x0 = random_state<double>(rng, 0.0);

        struct Oracle {
            Tensor<double> x0v, x0a;
            std::vector<int> vshape, ashape;
            mutable flow::VelocityPair<double> last;
            std::vector<int> video_shape() const { return vshape; }
            std::vector<int> action_shape() const { return ashape; }
            void impose(flow::JointState<double>&, const int&) const {}
            flow::VelocityPair<double> forward(const flow::JointState<double>& x, double t,
                                               const int&) {
                // v = (x_t - x0)/t is the constant field x1 - x0 along the line
                flow::VelocityPair<double> v;
                v.video = Tensor<double>(x.video.shape);
                v.action = Tensor<double>(x.action.shape);
                for (std::size_t i = 0; i < v.video.size(); ++i)
                    v.video[i] = (x.video[i] - x0v[i]) / t;
                for (std::size_t i = 0; i < v.action.size(); ++i)
                    v.action[i] = (x.action[i] - x0a[i]) / t;
                return v;
            }
        } oracle;
        oracle.x0v = x0.video;
        oracle.x0a = x0.action;
        oracle.vshape = x0.video.shape;
        oracle.ashape = x0.action.shape;

        Rng srng(99);
        auto out = flow::euler_sample<double>(oracle, 0, steps, srng);
        double maxerr = 0.0;
        for (std::size_t i = 0; i < out.video.size(); ++i)
            maxerr = std::max(maxerr, std::abs(out.video[i] - x0.video[i]));
        for (std::size_t i = 0; i < out.action.size(); ++i)
            maxerr = std::max(maxerr, std::abs(out.action[i] - x0.action[i]));
        CHECK(maxerr < 1e-5);
    }
}

TEST_CASE("sample_timestep covers (0,1) deterministically") {
    Rng a(5), b(5);
    auto t1 = flow::sample_timestep(100, a);
    auto t2 = flow::sample_timestep(100, b);
    for (int i = 0; i < 100; ++i) {
        CHECK(t1[i] == t2[i]);
        CHECK(t1[i] >= 0.0);
        CHECK(t1[i] < 1.0);
    }
    CHECK_THROWS(flow::sample_timestep(0, a));
}
