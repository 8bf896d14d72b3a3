// Copyright (C) 2026 covar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "covar/toyworld.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

// COVR1 episode container: little-endian, magic "COVR", u32 version=1,
// u32 T,H,W,L,token_len, f32 frames (T*3*H*W), f32 actions (T*L),
// i32 tokens, u64 seed. One file per episode; a dataset is a directory with
// a JSON manifest listing filenames and task families.

namespace covar::io {

void write_episode(const std::filesystem::path& path, const toy::Episode& ep);

// Reads the raw tensors; the scene is regenerated from (seed, task).
toy::Episode read_episode(const std::filesystem::path& path, toy::Task task);

struct ManifestEntry {
    std::string file;
    toy::Task task;
    std::uint64_t seed;
};

struct Manifest {
    std::vector<ManifestEntry> episodes;
    // Seed ranges [lo, hi) per split, recorded at generation time.
    std::uint64_t train_lo = 0, train_hi = 0;
    std::uint64_t val_lo = 0, val_hi = 0;
    std::uint64_t test_lo = 0, test_hi = 0;
    int frames = toy::kDefaultFrames;
    int image = toy::kDefaultImage;
};

void write_manifest(const std::filesystem::path& dir, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& dir);

// FNV-1a over file bytes, used for run manifests.
std::uint64_t file_hash(const std::filesystem::path& path);

} // namespace covar::io
