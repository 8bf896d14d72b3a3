// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#include "covar/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace covar {

namespace {

constexpr char kMagic[4] = {'C', 'V', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is)
        throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void put_string(std::ostream& os, const std::string& s) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, std::size_t max_len) {
    const auto n = get<std::uint32_t>(is);
    if (n > max_len)
        throw std::runtime_error("checkpoint: implausible string length");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is)
        throw std::runtime_error("checkpoint: truncated file");
    return s;
}

} // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name)
            return &a;
    return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os)
            throw std::runtime_error("checkpoint: cannot open " + tmp.string());
        os.write(kMagic, 4);
        put<std::uint32_t>(os, kVersion);
        put<std::uint64_t>(os, ck.step);
        put<std::uint64_t>(os, ck.rng_state);
        put_string(os, ck.config.dump());
        put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.arrays.size()));
        for (const auto& a : ck.arrays) {
            put_string(os, a.name);
            put<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
            for (int d : a.shape)
                put<std::int32_t>(os, d);
            os.write(reinterpret_cast<const char*>(a.data.data()),
                     static_cast<std::streamsize>(a.data.size() * sizeof(float)));
        }
        if (!os)
            throw std::runtime_error("checkpoint: write failed on " + tmp.string());
    }
    fs::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != std::string(kMagic, 4))
        throw std::runtime_error("checkpoint: bad magic in " + path);
    if (get<std::uint32_t>(is) != kVersion)
        throw std::runtime_error("checkpoint: unsupported version in " + path);
    Checkpoint ck;
    ck.step = get<std::uint64_t>(is);
    ck.rng_state = get<std::uint64_t>(is);
    ck.config = nlohmann::json::parse(get_string(is, 1u << 20));
    const auto n = get<std::uint32_t>(is);
    if (n > (1u << 20))
        throw std::runtime_error("checkpoint: implausible array count");
    ck.arrays.resize(n);
    for (auto& a : ck.arrays) {
        a.name = get_string(is, 4096);
        const auto ndim = get<std::uint32_t>(is);
        if (ndim > 8)
            throw std::runtime_error("checkpoint: implausible rank");
        std::size_t count = 1;
        a.shape.resize(ndim);
        for (auto& d : a.shape) {
            d = get<std::int32_t>(is);
            if (d < 0)
                throw std::runtime_error("checkpoint: negative dimension");
            count *= static_cast<std::size_t>(d);
        }
        a.data.resize(count);
        is.read(reinterpret_cast<char*>(a.data.data()),
                static_cast<std::streamsize>(count * sizeof(float)));
        if (!is)
            throw std::runtime_error("checkpoint: truncated array " + a.name);
    }
    return ck;
}

nlohmann::json to_json(const ModelConfig& cfg) {
    return {{"hidden", cfg.hidden},
            {"heads", cfg.heads},
            {"block_pairs", cfg.block_pairs},
            {"patch", cfg.patch},
            {"frames", cfg.frames},
            {"height", cfg.height},
            {"width", cfg.width},
            {"action_dim", cfg.action_dim},
            {"vocab", cfg.vocab},
            {"text_len", cfg.text_len},
            {"attn", cfg.attn == AttnMode::Bridge  ? "bridge"
                     : cfg.attn == AttnMode::Self ? "self"
                                                   : "cross"},
            {"decoder", cfg.decoder == DecoderKind::Unet ? "unet" : "mlp"},
            {"video_branch", cfg.video_branch},
            {"bridge_interval", cfg.bridge_interval}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.hidden = j.value("hidden", cfg.hidden);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.block_pairs = j.value("block_pairs", cfg.block_pairs);
    cfg.patch = j.value("patch", cfg.patch);
    cfg.frames = j.value("frames", cfg.frames);
    cfg.height = j.value("height", cfg.height);
    cfg.width = j.value("width", cfg.width);
    cfg.action_dim = j.value("action_dim", cfg.action_dim);
    cfg.vocab = j.value("vocab", cfg.vocab);
    cfg.text_len = j.value("text_len", cfg.text_len);
    const std::string attn = j.value("attn", "bridge");
    if (attn == "bridge")
        cfg.attn = AttnMode::Bridge;
    else if (attn == "self")
        cfg.attn = AttnMode::Self;
    else if (attn == "cross")
        cfg.attn = AttnMode::Cross;
    else
        throw std::invalid_argument("config: unknown attn mode " + attn);
    const std::string dec = j.value("decoder", "unet");
    if (dec == "unet")
        cfg.decoder = DecoderKind::Unet;
    else if (dec == "mlp")
        cfg.decoder = DecoderKind::Mlp;
    else
        throw std::invalid_argument("config: unknown decoder " + dec);
    cfg.video_branch = j.value("video_branch", cfg.video_branch);
    cfg.bridge_interval = j.value("bridge_interval", cfg.bridge_interval);
    cfg.validate();
    return cfg;
}

nlohmann::json to_json(const RefinerConfig& cfg) {
    return {{"hidden", cfg.hidden},
            {"heads", cfg.heads},
            {"self_blocks", cfg.self_blocks},
            {"cross_blocks", cfg.cross_blocks},
            {"patch", cfg.patch},
            {"frames", cfg.frames},
            {"height", cfg.height},
            {"width", cfg.width},
            {"action_dim", cfg.action_dim},
            {"vocab", cfg.vocab},
            {"text_len", cfg.text_len},
            {"smooth_sigma", cfg.smooth_sigma},
            {"jitter_sigma", cfg.jitter_sigma},
            {"mix_model_fraction", cfg.mix_model_fraction}};
}

RefinerConfig refiner_config_from_json(const nlohmann::json& j) {
    RefinerConfig cfg;
    cfg.hidden = j.value("hidden", cfg.hidden);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.self_blocks = j.value("self_blocks", cfg.self_blocks);
    cfg.cross_blocks = j.value("cross_blocks", cfg.cross_blocks);
    cfg.patch = j.value("patch", cfg.patch);
    cfg.frames = j.value("frames", cfg.frames);
    cfg.height = j.value("height", cfg.height);
    cfg.width = j.value("width", cfg.width);
    cfg.action_dim = j.value("action_dim", cfg.action_dim);
    cfg.vocab = j.value("vocab", cfg.vocab);
    cfg.text_len = j.value("text_len", cfg.text_len);
    cfg.smooth_sigma = j.value("smooth_sigma", cfg.smooth_sigma);
    cfg.jitter_sigma = j.value("jitter_sigma", cfg.jitter_sigma);
    cfg.mix_model_fraction = j.value("mix_model_fraction", cfg.mix_model_fraction);
    cfg.validate();
    return cfg;
}

} // namespace covar
