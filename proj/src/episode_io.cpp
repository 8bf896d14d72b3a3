// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#include "covar/episode_io.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace covar::io {

namespace {

constexpr char kMagic[4] = {'C', 'O', 'V', 'R'};

template <typename T>
void put(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is)
        throw std::runtime_error("COVR1: truncated file");
    return v;
}

std::string task_name(toy::Task t) { return t == toy::Task::PickPlace ? "pick_place" : "push"; }

toy::Task task_from_name(const std::string& s) {
    if (s == "pick_place")
        return toy::Task::PickPlace;
    if (s == "push")
        return toy::Task::Push;
    throw std::runtime_error("unknown task family: " + s);
}

} // namespace

void write_episode(const std::filesystem::path& path, const toy::Episode& ep) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("cannot open for write: " + path.string());
    os.write(kMagic, 4);
    put<std::uint32_t>(os, 1);
    const int t = ep.frames.shape[0];
    const int h = ep.frames.shape[2];
    const int w = ep.frames.shape[3];
    const int l = ep.actions.shape[1];
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(h));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(w));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(l));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ep.tokens.size()));
    os.write(reinterpret_cast<const char*>(ep.frames.data()),
             static_cast<std::streamsize>(ep.frames.size() * sizeof(float)));
    os.write(reinterpret_cast<const char*>(ep.actions.data()),
             static_cast<std::streamsize>(ep.actions.size() * sizeof(float)));
    os.write(reinterpret_cast<const char*>(ep.tokens.data()),
             static_cast<std::streamsize>(ep.tokens.size() * sizeof(std::int32_t)));
    put<std::uint64_t>(os, ep.scene.seed);
    if (!os)
        throw std::runtime_error("write failed: " + path.string());
}

toy::Episode read_episode(const std::filesystem::path& path, toy::Task task) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot open: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("COVR1: bad magic in " + path.string());
    if (get<std::uint32_t>(is) != 1)
        throw std::runtime_error("COVR1: unsupported version in " + path.string());
    const auto t = get<std::uint32_t>(is);
    const auto h = get<std::uint32_t>(is);
    const auto w = get<std::uint32_t>(is);
    const auto l = get<std::uint32_t>(is);
    const auto ntok = get<std::uint32_t>(is);
    if (t == 0 || h == 0 || w == 0 || l == 0 || t > 4096 || h > 4096 || w > 4096 || l > 256 ||
        ntok > 256)
        throw std::runtime_error("COVR1: implausible header in " + path.string());

    toy::Episode ep;
    ep.frames = Tensor<float>({static_cast<int>(t), 3, static_cast<int>(h), static_cast<int>(w)});
    ep.actions = Tensor<float>({static_cast<int>(t), static_cast<int>(l)});
    ep.tokens.resize(ntok);
    is.read(reinterpret_cast<char*>(ep.frames.data()),
            static_cast<std::streamsize>(ep.frames.size() * sizeof(float)));
    is.read(reinterpret_cast<char*>(ep.actions.data()),
            static_cast<std::streamsize>(ep.actions.size() * sizeof(float)));
    is.read(reinterpret_cast<char*>(ep.tokens.data()),
            static_cast<std::streamsize>(ep.tokens.size() * sizeof(std::int32_t)));
    if (!is)
        throw std::runtime_error("COVR1: truncated payload in " + path.string());
    const auto seed = get<std::uint64_t>(is);
    ep.scene = toy::sample_scene(seed, task);
    return ep;
}

void write_manifest(const std::filesystem::path& dir, const Manifest& m) {
    nlohmann::json j;
    j["format"] = "COVR1";
    j["frames"] = m.frames;
    j["image"] = m.image;
    j["splits"] = {
        {"train", {m.train_lo, m.train_hi}},
        {"val", {m.val_lo, m.val_hi}},
        {"test", {m.test_lo, m.test_hi}},
    };
    auto& eps = j["episodes"] = nlohmann::json::array();
    for (const auto& e : m.episodes)
        eps.push_back({{"file", e.file}, {"task", task_name(e.task)}, {"seed", e.seed}});
    std::ofstream os(dir / "manifest.json");
    if (!os)
        throw std::runtime_error("cannot write manifest in " + dir.string());
    os << j.dump(2) << '\n';
}

Manifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is)
        throw std::runtime_error("missing manifest.json in " + dir.string());
    nlohmann::json j;
    is >> j;
    Manifest m;
    m.frames = j.value("frames", toy::kDefaultFrames);
    m.image = j.value("image", toy::kDefaultImage);
    if (j.contains("splits")) {
        const auto& s = j["splits"];
        m.train_lo = s["train"][0];
        m.train_hi = s["train"][1];
        m.val_lo = s["val"][0];
        m.val_hi = s["val"][1];
        m.test_lo = s["test"][0];
        m.test_hi = s["test"][1];
    }
    for (const auto& e : j["episodes"])
        m.episodes.push_back({e["file"], task_from_name(e["task"]), e["seed"]});
    return m;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot open for hash: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (is) {
        is.read(buf, sizeof(buf));
        const std::streamsize n = is.gcount();
        for (std::streamsize i = 0; i < n; ++i)
            h = (h ^ static_cast<unsigned char>(buf[i])) * 0x100000001b3ULL;
    }
    return h;
}

} // namespace covar::io
