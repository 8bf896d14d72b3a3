// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "covar/checkpoint.hpp"
#include "covar/episode_io.hpp"
#include "covar/model.hpp"
#include "covar/toyworld.hpp"

#include <filesystem>
#include <fstream>

using namespace covar;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto d = fs::temp_directory_path() / "covar_io_test";
    fs::create_directories(d);
    return d;
}

} // namespace

TEST_CASE("episode round-trips through COVR1") {
    auto scene = toy::sample_scene(17, toy::Task::PickPlace);
    auto ep = toy::expert_demo(scene, 8);
    auto path = temp_dir() / "ep17.covr";
    io::write_episode(path, ep);
    auto back = io::read_episode(path, toy::Task::PickPlace);
    CHECK(back.frames.shape == ep.frames.shape);
    CHECK(back.frames.v == ep.frames.v);
    CHECK(back.actions.v == ep.actions.v);
    CHECK(back.tokens == ep.tokens);
    CHECK(back.scene.seed == 17);
    CHECK(back.scene.instruction == ep.scene.instruction);
}

TEST_CASE("episode files are byte-identical across writes") {
    auto scene = toy::sample_scene(23, toy::Task::Push);
    auto ep = toy::expert_demo(scene, 8);
    auto p1 = temp_dir() / "a.covr";
    auto p2 = temp_dir() / "b.covr";
    io::write_episode(p1, ep);
    io::write_episode(p2, ep);
    CHECK(io::file_hash(p1) == io::file_hash(p2));
}

TEST_CASE("corrupt magic is rejected") {
    auto path = temp_dir() / "bad.covr";
    std::ofstream(path, std::ios::binary) << "NOPE garbage";
    CHECK_THROWS(io::read_episode(path, toy::Task::PickPlace));
}

TEST_CASE("manifest round-trips") {
    auto dir = temp_dir() / "ds";
    fs::create_directories(dir);
    io::Manifest m;
    m.episodes.push_back({"ep0.covr", toy::Task::PickPlace, 0});
    m.episodes.push_back({"ep1.covr", toy::Task::Push, 1});
    m.train_lo = 0;
    m.train_hi = 2000;
    m.val_lo = 2000;
    m.val_hi = 2100;
    m.test_lo = 10000;
    m.test_hi = 10200;
    io::write_manifest(dir, m);
    auto back = io::read_manifest(dir);
    CHECK(back.episodes.size() == 2);
    CHECK(back.episodes[1].task == toy::Task::Push);
    CHECK(back.train_hi == 2000);
    CHECK(back.test_lo == 10000);
    CHECK(back.frames == m.frames);
}

TEST_CASE("checkpoint container round-trips and validates") {
    ModelConfig cfg;
    cfg.hidden = 16;
    cfg.heads = 2;
    cfg.block_pairs = 1;
    cfg.frames = 4;
    cfg.height = 16;
    cfg.width = 16;
    CovarModel<float> model(cfg);
    Rng rng(5);
    model.init_weights(rng);

    Checkpoint ck;
    ck.config = to_json(cfg);
    ck.config["component"] = "model";
    ck.step = 123;
    ck.rng_state = 0xdeadbeefULL;
    collect_params(model.registry(), ck.arrays);

    auto path = temp_dir() / "model.ck";
    save_checkpoint(path.string(), ck);
    auto back = load_checkpoint(path.string());
    CHECK(back.step == 123);
    CHECK(back.rng_state == 0xdeadbeefULL);
    CHECK(back.config["component"] == "model");

    // forward after load matches forward before save bit-exactly
    CovarModel<float> model2(model_config_from_json(back.config));
    load_params(model2.registry(), back);
    Rng drng(9);
    flow::JointState<float> x;
    x.video = Tensor<float>(model.video_shape());
    x.action = Tensor<float>(model.action_shape());
    flow::fill_normal(x.video, drng);
    flow::fill_normal(x.action, drng);
    Conditioning<float> cond;
    cond.initial_frame = Tensor<float>({3, cfg.height, cfg.width});
    flow::fill_normal(cond.initial_frame, drng);
    cond.initial_action = {0.1f, -0.2f, 0.0f};
    cond.tokens = {1, 2, 3, 0, 0, 0, 0, 0};
    auto v1 = model.forward(x, 0.5, cond);
    auto v2 = model2.forward(x, 0.5, cond);
    CHECK(v1.video.v == v2.video.v);
    CHECK(v1.action.v == v2.action.v);

    // shape mismatch rejected
    back.arrays[0].shape[0] += 1;
    back.arrays[0].data.resize(back.arrays[0].data.size() + 16);
    CovarModel<float> model3(cfg);
    CHECK_THROWS(load_params(model3.registry(), back));
}
