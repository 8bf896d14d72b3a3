// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "covar/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

// Deterministic 2D tabletop environment. Coordinates live in [-1,1]^2 with
// y pointing up. The effector teleports to the commanded position each step;
// grip crossing 0.5 picks up / releases, and in PUSH tasks a closed-distance
// contact displaces the object along the motion vector.

namespace covar::toy {

constexpr int kActionDim = 3; // (x, y, grip)
constexpr int kTokenLen = 8;
constexpr int kPadToken = 0;
constexpr double kPickupRadius = 0.1;
constexpr double kSuccessRadius = 0.12;
constexpr double kGripThreshold = 0.5;
constexpr int kDefaultFrames = 8;
constexpr int kDefaultImage = 32;

enum class ObjShape { Square, Disc };
enum class Task { PickPlace, Push };

struct SceneObject {
    ObjShape shape;
    int color; // palette index, 0..5
    double x, y;
};

struct SceneSpec {
    std::uint64_t seed = 0;
    std::vector<SceneObject> objects; // 2..4, pairwise distance >= 0.3
    Task task = Task::PickPlace;
    int target_index = 0;
    double goal_x = 0, goal_y = 0; // >= 0.4 from target
    std::string instruction;
};

struct EnvState {
    double x = 0, y = 0;
    double grip = 0; // [0,1]
    int held = -1;   // object index or -1
    std::vector<std::array<double, 2>> object_positions;
};

struct Action {
    double x = 0, y = 0, grip = 0;
};

struct Episode {
    Tensor<float> frames;  // T x 3 x H x W, values in [0,1]
    Tensor<float> actions; // T x 3; actions[0] is the initial effector state
    std::vector<std::int32_t> tokens; // length kTokenLen, pad id 0
    SceneSpec scene;
};

// RGB palette (6 colors), values in [0,1].
const std::array<std::array<float, 3>, 6>& palette();
const std::vector<std::string>& vocabulary();
int vocab_size();

// Deterministic in (seed, family). Throws std::runtime_error if rejection
// sampling cannot place the scene within 1000 attempts.
SceneSpec sample_scene(std::uint64_t seed, Task family);

// Initial state derived deterministically from the scene.
EnvState init_state(const SceneSpec& scene);

EnvState step(const EnvState& state, const Action& action, Task task);

// Rasterize into out[3*H*W] (channel-major).
void render(const EnvState& state, const SceneSpec& scene, float* out, int h, int w);

// Scripted waypoint policy, linearly interpolated to exactly T steps.
// frames[i] is the render after i steps; actions[0] equals the initial state.
Episode expert_demo(const SceneSpec& scene, int t, int h = kDefaultImage, int w = kDefaultImage);

bool check_success(const SceneSpec& scene, const EnvState& final_state);

// Replay actions open-loop from the scene's initial state; returns final state.
EnvState execute(const SceneSpec& scene, const Tensor<float>& actions);

std::vector<std::int32_t> tokenize(const std::string& text);
std::string detokenize(const std::vector<std::int32_t>& tokens);

} // namespace covar::toy
