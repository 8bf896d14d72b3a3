// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "covar/model.hpp"
#include "covar/nn.hpp"
#include "covar/refiner.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

// Checkpoint container: a JSON config block plus named flat f32 arrays
// (little-endian), the training step, and the trainer rng state. Loading
// validates every parameter name and shape against the config. Optimizer
// moments ride along as arrays suffixed ".m" / ".v".

namespace covar {

struct NamedArray {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

struct Checkpoint {
    nlohmann::json config; // includes "component": "model" | "refiner"
    std::uint64_t step = 0;
    std::uint64_t rng_state = 0;
    std::vector<NamedArray> arrays;

    const NamedArray* find(const std::string& name) const;
};

// Atomic write: temp file in the same directory, then rename.
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Config <-> JSON.
nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RefinerConfig& cfg);
RefinerConfig refiner_config_from_json(const nlohmann::json& j);

// Registry <-> arrays. load validates that every registry parameter is
// present with a matching shape; extra non-parameter arrays are ignored.
template <typename T>
void collect_params(const nn::Registry<T>& reg, std::vector<NamedArray>& out) {
    for (const auto& p : reg.params()) {
        NamedArray a;
        a.name = p->name;
        a.shape = p->shape;
        a.data.assign(p->w.begin(), p->w.end());
        out.push_back(std::move(a));
    }
}

template <typename T>
void load_params(nn::Registry<T>& reg, const Checkpoint& ck) {
    for (auto& p : reg.params()) {
        const NamedArray* a = ck.find(p->name);
        if (!a)
            throw std::runtime_error("checkpoint: missing parameter " + p->name);
        if (a->shape != p->shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + p->name);
        for (std::size_t i = 0; i < p->w.size(); ++i)
            p->w[i] = static_cast<T>(a->data[i]);
    }
}

} // namespace covar
