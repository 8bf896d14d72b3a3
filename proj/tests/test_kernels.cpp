// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "covar/checkpoint.hpp"
#include "covar/kernels.hpp"
#include "covar/model.hpp"
#include "covar/refiner.hpp"
#include "covar/rng.hpp"

#include <cmath>
#include <cstdlib>
#include <vector>

using namespace covar;

namespace {

std::vector<float> randv(Rng& rng, int n, float scale = 1.0f) {
    std::vector<float> v(n);
    for (auto& x : v)
        x = static_cast<float>(rng.normal()) * scale;
    return v;
}

} // namespace

TEST_CASE("active kernel variants match scalar reference") {
    Rng rng(12345);
    const int m = 13, k = 37, n = 29;
    auto a = randv(rng, m * k);
    auto b = randv(rng, k * n);
    auto bt = randv(rng, n * k);
    auto at = randv(rng, k * m);

    SUBCASE("matmul_nn") {
        std::vector<float> c1(m * n), c2(m * n, 1.0f);
        kern::matmul_nn(a.data(), b.data(), c1.data(), m, k, n, false);
        std::vector<float> ref(m * n);
        kern::scalar::matmul_nn(a.data(), b.data(), ref.data(), m, k, n, false);
        for (int i = 0; i < m * n; ++i)
            CHECK(c1[i] == doctest::Approx(ref[i]).epsilon(1e-4));
        // accumulate flag adds on top
        kern::matmul_nn(a.data(), b.data(), c2.data(), m, k, n, true);
        for (int i = 0; i < m * n; ++i)
            CHECK(c2[i] == doctest::Approx(ref[i] + 1.0f).epsilon(1e-4));
    }
    SUBCASE("matmul_nt") {
        std::vector<float> c(m * n), ref(m * n);
        kern::matmul_nt(a.data(), bt.data(), c.data(), m, k, n, false);
        kern::scalar::matmul_nt(a.data(), bt.data(), c.data(), m, k, n, false);
        kern::scalar::matmul_nt(a.data(), bt.data(), ref.data(), m, k, n, false);
        for (int i = 0; i < m * n; ++i)
            CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-4));
    }
    SUBCASE("matmul_tn") {
        std::vector<float> c(m * n), ref(m * n);
        kern::matmul_tn(at.data(), b.data(), c.data(), m, k, n, false);
        kern::scalar::matmul_tn(at.data(), b.data(), ref.data(), m, k, n, false);
        for (int i = 0; i < m * n; ++i)
            CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-4));
    }
    SUBCASE("elementwise") {
        auto x = randv(rng, 1001, 2.0f);
        std::vector<float> y1(x.size()), y2(x.size());
        kern::vexp(x.data(), y1.data(), static_cast<int>(x.size()));
        kern::scalar::vexp(x.data(), y2.data(), static_cast<int>(x.size()));
        for (std::size_t i = 0; i < x.size(); ++i)
            CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-5));
        kern::vtanh(x.data(), y1.data(), static_cast<int>(x.size()));
        kern::scalar::vtanh(x.data(), y2.data(), static_cast<int>(x.size()));
        for (std::size_t i = 0; i < x.size(); ++i)
            CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-5));
        kern::gelu(x.data(), y1.data(), static_cast<int>(x.size()));
        kern::scalar::gelu(x.data(), y2.data(), static_cast<int>(x.size()));
        for (std::size_t i = 0; i < x.size(); ++i)
            CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-5));
        std::vector<float> g1(x.size(), 0.5f), g2(x.size(), 0.5f);
        auto dy = randv(rng, static_cast<int>(x.size()));
        kern::gelu_grad(x.data(), dy.data(), g1.data(), static_cast<int>(x.size()));
        kern::scalar::gelu_grad(x.data(), dy.data(), g2.data(), static_cast<int>(x.size()));
        for (std::size_t i = 0; i < x.size(); ++i)
            CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-4));
    }
    SUBCASE("softmax and reductions") {
        auto x = randv(rng, 24 * 17, 3.0f);
        std::vector<float> y1 = x, y2 = x;
        kern::softmax_rows(y1.data(), 24, 17);
        kern::scalar::softmax_rows(y2.data(), 24, 17);
        for (std::size_t i = 0; i < x.size(); ++i)
            CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-5));
        CHECK(kern::sumsq(x.data(), static_cast<int>(x.size())) ==
              doctest::Approx(kern::scalar::sumsq(x.data(), static_cast<int>(x.size())))
                  .epsilon(1e-5));
        std::vector<float> z1 = x, z2 = x;
        kern::axpy(0.37f, x.data(), z1.data(), static_cast<int>(x.size()));
        kern::scalar::axpy(0.37f, x.data(), z2.data(), static_cast<int>(x.size()));
        for (std::size_t i = 0; i < x.size(); ++i)
            CHECK(z1[i] == doctest::Approx(z2[i]).epsilon(1e-6));
    }
}

TEST_CASE("kernel dispatch honours environment override") {
    // the build ran under whatever COVAR_KERNELS the harness set; just check
    // that the reported isa is a known name
    const char* name = kern::isa_name(kern::active());
    CHECK((std::string(name) == "scalar" || std::string(name) == "avx2"));
}
