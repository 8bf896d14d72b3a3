// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "covar/checkpoint.hpp"
#include "covar/episode_io.hpp"
#include "covar/model.hpp"
#include "covar/refiner.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

// Training loop: seeded batching, rectified-flow loss assembly, decoupled
// weight decay with adaptive moments, cosine learning-rate decay with linear
// warmup, gradient clipping, atomic checkpoints, bit-identical resume.

namespace covar {

struct TrainConfig {
    std::string dataset_path;
    std::string out_dir;
    std::string component = "model"; // "model" | "refiner"
    int batch_size = 32;
    int steps = 20000;
    int warmup = 500;
    int eval_every = 1000;
    int checkpoint_every = 1000;
    double learning_rate = 3e-4;
    double grad_clip = 1.0;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double w_video = 1.0;
    double w_action = 1.0;
    std::uint64_t seed = 0;
    ModelConfig model;
    RefinerConfig refiner;
    // model checkpoint feeding the refiner's model-sample coarse channel;
    // empty = synthetic curriculum only (mix_model_fraction treated as 0)
    std::string model_ckpt;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Decoupled weight decay + adaptive moments, beta = (0.9, 0.95).
class AdamW {
public:
    void init(const nn::Registry<float>& reg);
    void step(nn::Registry<float>& reg, double lr, double weight_decay, double beta1,
              double beta2, int t);
    // moments as checkpoint arrays (suffixes .m / .v) and back
    void collect(const nn::Registry<float>& reg, std::vector<NamedArray>& out) const;
    void load(const nn::Registry<float>& reg, const Checkpoint& ck);

private:
    std::vector<std::vector<float>> m_, v_;
};

// Global-norm gradient clip; returns the pre-clip norm.
double clip_gradients(nn::Registry<float>& reg, double max_norm);

// lr schedule: linear warmup then cosine decay to zero.
double lr_at(const TrainConfig& cfg, int step);

struct TrainLogRow {
    int step = 0;
    double loss = 0.0;
    double loss_video = 0.0;
    double loss_action = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
    std::optional<double> eval_loss;
};

std::string to_log_line(const TrainLogRow& row);

struct TrainResult {
    std::string checkpoint_path;
    double first_loss = 0.0;
    double final_loss = 0.0;
    int steps_run = 0;
};

// In-memory dataset; unreadable episodes are skipped (> 1% unreadable aborts).
struct Dataset {
    std::vector<toy::Episode> episodes;
    io::Manifest manifest;
    int skipped = 0;

    static Dataset load(const std::string& dir);
};

// Runs (or resumes, when out_dir holds a checkpoint and resume is true) the
// main-model training loop. Log rows go to `log` as line-delimited JSON.
TrainResult train_model(const TrainConfig& cfg, const Dataset& data, std::ostream& log,
                        bool resume = false,
                        const std::function<void(int)>& on_step = nullptr);

TrainResult train_refiner(const TrainConfig& cfg, const Dataset& data, std::ostream& log,
                          bool resume = false);

// One training step of the main model on explicit episode indices; exposed
// for determinism tests. Returns the log row.
TrainLogRow train_step(CovarModel<float>& model, AdamW& opt, const TrainConfig& cfg,
                       const Dataset& data, int step);

} // namespace covar
