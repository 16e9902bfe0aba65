// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <filesystem>
#include <vector>

namespace mvtf {

enum class WavEncoding { kPcm16, kFloat32 };

/// Reads a mono 16 kHz RIFF/WAVE file (16-bit PCM or 32-bit float).
/// Any other rate, channel count, or encoding is an InputError.
std::vector<float> read_wav(const std::filesystem::path& path);

void write_wav(const std::filesystem::path& path, const std::vector<float>& samples,
               WavEncoding encoding = WavEncoding::kFloat32);

}  // namespace mvtf
