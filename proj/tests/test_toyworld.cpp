// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "covar/toyworld.hpp"

#include <cmath>
#include <set>

using namespace covar;

TEST_CASE("scene sampling respects layout constraints") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto scene = toy::sample_scene(seed, toy::Task::PickPlace);
        CHECK(scene.seed == seed);
        CHECK(scene.objects.size() >= 2);
        CHECK(scene.objects.size() <= 4);
        for (std::size_t i = 0; i < scene.objects.size(); ++i) {
            CHECK(std::abs(scene.objects[i].x) <= 0.8);
            CHECK(std::abs(scene.objects[i].y) <= 0.8);
            for (std::size_t j = i + 1; j < scene.objects.size(); ++j) {
                const double dx = scene.objects[i].x - scene.objects[j].x;
                const double dy = scene.objects[i].y - scene.objects[j].y;
                CHECK(std::sqrt(dx * dx + dy * dy) >= 0.3);
            }
        }
        const auto& tgt = scene.objects[scene.target_index];
        const double gx = scene.goal_x - tgt.x, gy = scene.goal_y - tgt.y;
        CHECK(std::sqrt(gx * gx + gy * gy) >= 0.4);
        // distinct (shape, color) pairs
        std::set<std::pair<int, int>> combos;
        for (const auto& o : scene.objects)
            combos.insert({static_cast<int>(o.shape), o.color});
        CHECK(combos.size() == scene.objects.size());
    }
}

TEST_CASE("scene sampling is deterministic and instruction round-trips") {
    auto a = toy::sample_scene(42, toy::Task::PickPlace);
    auto b = toy::sample_scene(42, toy::Task::PickPlace);
    CHECK(a.instruction == b.instruction);
    CHECK(a.objects.size() == b.objects.size());
    for (std::size_t i = 0; i < a.objects.size(); ++i) {
        CHECK(a.objects[i].x == b.objects[i].x);
        CHECK(a.objects[i].y == b.objects[i].y);
    }
    auto toks = toy::tokenize(a.instruction);
    CHECK(toks.size() == toy::kTokenLen);
    CHECK(toy::detokenize(toks) == a.instruction);
}

TEST_CASE("step: pickup, carry and release") {
    toy::SceneSpec scene = toy::sample_scene(7, toy::Task::PickPlace);
    toy::EnvState s = toy::init_state(scene);
    const auto& tgt = scene.objects[scene.target_index];

    // move onto the target with grip open
    s = toy::step(s, {tgt.x, tgt.y, 0.0}, scene.task);
    CHECK(s.held == -1);
    // close grip -> pick up
    s = toy::step(s, {tgt.x, tgt.y, 1.0}, scene.task);
    CHECK(s.held == scene.target_index);
    // carry to goal: object tracks effector
    s = toy::step(s, {scene.goal_x, scene.goal_y, 1.0}, scene.task);
    CHECK(s.object_positions[scene.target_index][0] == doctest::Approx(scene.goal_x));
    CHECK(s.object_positions[scene.target_index][1] == doctest::Approx(scene.goal_y));
    // open grip -> release
    s = toy::step(s, {scene.goal_x, scene.goal_y, 0.0}, scene.task);
    CHECK(s.held == -1);
    CHECK(toy::check_success(scene, s));
}

TEST_CASE("step clamps commands to the table") {
    auto scene = toy::sample_scene(3, toy::Task::PickPlace);
    auto s = toy::init_state(scene);
    s = toy::step(s, {5.0, -5.0, 2.0}, scene.task);
    CHECK(s.x == 1.0);
    CHECK(s.y == -1.0);
    CHECK(s.grip == 1.0);
}

TEST_CASE("expert demo succeeds across seeds and tasks") {
    for (toy::Task task : {toy::Task::PickPlace, toy::Task::Push}) {
        for (std::uint64_t seed = 100; seed < 160; ++seed) {
            auto scene = toy::sample_scene(seed, task);
            auto ep = toy::expert_demo(scene, 8);
            CHECK(ep.frames.shape == std::vector<int>{8, 3, 32, 32});
            CHECK(ep.actions.shape == std::vector<int>{8, 3});
            auto fin = toy::execute(scene, ep.actions);
            CHECK(toy::check_success(scene, fin));
        }
    }
}

TEST_CASE("expert demo rejects too few steps") {
    auto scene = toy::sample_scene(1, toy::Task::PickPlace);
    CHECK_THROWS(toy::expert_demo(scene, 4));
}

TEST_CASE("render is deterministic with values in range") {
    auto scene = toy::sample_scene(11, toy::Task::PickPlace);
    auto s = toy::init_state(scene);
    std::vector<float> img1(3 * 32 * 32), img2(3 * 32 * 32);
    toy::render(s, scene, img1.data(), 32, 32);
    toy::render(s, scene, img2.data(), 32, 32);
    CHECK(img1 == img2);
    for (float v : img1) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    // not all background: target object pixels present
    int non_bg = 0;
    for (float v : img1)
        if (v != 0.5f)
            ++non_bg;
    CHECK(non_bg > 0);
}

TEST_CASE("all-zero actions fail pick-place") {
    int success = 0;
    for (std::uint64_t seed = 300; seed < 320; ++seed) {
        auto scene = toy::sample_scene(seed, toy::Task::PickPlace);
        Tensor<float> zeros({8, 3});
        if (toy::check_success(scene, toy::execute(scene, zeros)))
            ++success;
    }
    CHECK(success <= 1); // goal is >= 0.4 from the target, ~never at origin
}

TEST_CASE("expert episode frames reflect the trajectory") {
    auto scene = toy::sample_scene(5, toy::Task::PickPlace);
    auto ep = toy::expert_demo(scene, 8);
    // the first and last frames must differ (the effector moved)
    bool differ = false;
    const std::size_t per = ep.frames.size() / 8;
    for (std::size_t i = 0; i < per && !differ; ++i)
        differ = ep.frames[i] != ep.frames[7 * per + i];
    CHECK(differ);
    // actions stay within the table with grip in [0,1]
    for (int t = 0; t < 8; ++t) {
        CHECK(std::abs(ep.actions[t * 3 + 0]) <= 1.0f);
        CHECK(std::abs(ep.actions[t * 3 + 1]) <= 1.0f);
        CHECK(ep.actions[t * 3 + 2] >= 0.0f);
        CHECK(ep.actions[t * 3 + 2] <= 1.0f);
    }
}
