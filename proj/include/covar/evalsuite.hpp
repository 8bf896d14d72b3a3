// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "covar/metrics.hpp"
#include "covar/model.hpp"
#include "covar/refiner.hpp"
#include "covar/toyworld.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

// Evaluation harness: held-out rollouts, aggregate metrics, the ablation
// grid, rank statistics, and frame-strip rendering.

namespace covar::eval {

struct EvalReport {
    double psnr_mean = 0.0;
    double ssim_mean = 0.0;
    double action_mse = 0.0;
    double final_pos_error = 0.0;
    double success_rate = 0.0;
    int n_episodes = 0;
    std::uint64_t noise_seed = 0;
    nlohmann::json config;
};

nlohmann::json to_json(const EvalReport& r);
std::string to_table(const EvalReport& r);

// First max_n seeds in [lo, hi) for which scene sampling succeeds.
std::vector<toy::SceneSpec> scenes_in_range(std::uint64_t lo, std::uint64_t hi, int max_n,
                                            toy::Task task);

// Generic rollout interface so the harness can be driven by the learned model
// or by oracle policies (expert injection) in tests.
struct Policy {
    virtual ~Policy() = default;
    // Returns generated (video, actions); video empty when there is no video
    // branch. `rng` is the per-scene noise stream.
    virtual flow::JointState<float> rollout(const toy::Episode& gt, Rng& rng) = 0;
};

// Learned policy: Euler sampling from a trained model, optional refiner.
struct ModelPolicy : Policy {
    CovarModel<float>* model = nullptr;
    Refiner<float>* refiner = nullptr;
    int steps = 30;

    flow::JointState<float> rollout(const toy::Episode& gt, Rng& rng) override;
};

// Oracle policy replaying the scripted expert; success must be 1.0.
struct ExpertPolicy : Policy {
    flow::JointState<float> rollout(const toy::Episode& gt, Rng& rng) override;
};

// Rolls out every scene open-loop and aggregates metrics. Deterministic in
// (policy weights, scenes, noise_seed). PSNR/SSIM are skipped (reported as 0)
// when the policy emits no video.
EvalReport evaluate(Policy& policy, const std::vector<toy::SceneSpec>& scenes, int frames,
                    int height, int width, std::uint64_t noise_seed);

// --- ablation grid -------------------------------------------------------

struct AblationArm {
    std::string name; // "full", "self", "cross", "mlp_decoder", "action_only"
    ModelConfig config;
};

// The five arms of the grid, derived from one base config.
std::vector<AblationArm> ablation_arms(const ModelConfig& base);

// Asserts each non-full arm differs from the base in exactly the flagged
// field; throws std::logic_error otherwise.
void assert_arm_isolation(const ModelConfig& base, const std::vector<AblationArm>& arms);

// One-sided Mann-Whitney rank-sum p-value for the hypothesis "samples in a
// stochastically exceed samples in b" (exact over all rank assignments for
// the small per-arm seed counts used here).
double rank_sum_p(const std::vector<double>& a, const std::vector<double>& b);

struct ArmResult {
    std::string name;
    std::vector<double> success_per_seed;
    double mean_success = 0.0;
    double p_vs_full = 1.0; // one-sided, full > arm
};

nlohmann::json to_json(const std::vector<ArmResult>& rows);
std::string to_table(const std::vector<ArmResult>& rows);

// --- frame strips --------------------------------------------------------

// Horizontal concatenation of the generated frames with the ground-truth
// effector trajectory overdrawn in red and the generated one in blue.
// Writes a binary PPM (P6).
void write_strip(const std::filesystem::path& path, const Tensor<float>& video,
                 const Tensor<float>& gt_actions, const Tensor<float>& gen_actions);

} // namespace covar::eval
