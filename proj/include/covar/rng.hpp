// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>

namespace covar {

// Deterministic RNG with platform-independent uniform/normal draws.
// std::distribution types are implementation-defined, so draws are mapped
// from raw 64-bit output by hand. State derivation uses splitmix64, which
// lets independent streams be keyed by (seed, stream, step).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Independent stream keyed by extra identifiers.
    Rng derive(std::uint64_t a, std::uint64_t b = 0) const {
        return Rng(mix(mix(state_, a), b));
    }

    std::uint64_t next_u64() {
        // splitmix64 step
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller; two uniforms per draw, no cached spare,
    // so the stream position is a pure function of the draw count.
    double normal() {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

private:
    std::uint64_t state_;
};

} // namespace covar
