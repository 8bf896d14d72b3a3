// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace covar {

// Dense row-major tensor. Shape is dynamic; storage is contiguous.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(count(shape), T(0)) {}
    Tensor(std::initializer_list<int> s) : Tensor(std::vector<int>(s)) {}

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d < 0)
                throw std::invalid_argument("negative tensor dim");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t size() const { return v.size(); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }
    T& operator[](std::size_t i) { return v[i]; }
    const T& operator[](std::size_t i) const { return v[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < v.size(); ++i)
            out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (const T& x : t.v)
        if (!std::isfinite(static_cast<double>(x)))
            return false;
    return true;
}

} // namespace covar
