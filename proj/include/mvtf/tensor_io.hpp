// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <filesystem>
#include <iosfwd>

#include "mvtf/tensor.hpp"

namespace mvtf {

/// On-disk tensor layout: "MVTF" magic, u16 version (1), u8 dtype
/// (0 = f32, 1 = f64), u8 rank, rank x u32 extents, row-major payload.
/// All fields little-endian.
enum class Dtype : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

template <typename S>
constexpr Dtype dtype_of() {
  return sizeof(S) == 4 ? Dtype::kFloat32 : Dtype::kFloat64;
}

template <typename S>
void write_tensor(std::ostream& os, const Tensor<S>& t);

/// Reads a tensor in either stored precision and converts to `S`.
/// Throws FormatError on bad magic, version, dtype, or truncation.
template <typename S>
Tensor<S> read_tensor(std::istream& is);

template <typename S>
void save_tensor(const std::filesystem::path& path, const Tensor<S>& t);

template <typename S>
Tensor<S> load_tensor(const std::filesystem::path& path);

}  // namespace mvtf
