// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include "mvtf/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace mvtf {
namespace {

constexpr std::array<char, 4> kMagic{'M', 'V', 'T', 'F'};
constexpr std::uint16_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "little-endian host required");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("tensor file truncated");
  return v;
}

template <typename Stored, typename S>
Tensor<S> read_payload(std::istream& is, Shape shape) {
  std::vector<Stored> raw(num_elements(shape));
  const auto bytes = static_cast<std::streamsize>(raw.size() * sizeof(Stored));
  if (bytes > 0 && !is.read(reinterpret_cast<char*>(raw.data()), bytes)) {
    throw FormatError("tensor payload truncated");
  }
  return Tensor<S>(std::move(shape), std::vector<S>(raw.begin(), raw.end()));
}

}  // namespace

template <typename S>
void write_tensor(std::ostream& os, const Tensor<S>& t) {
  if (t.rank() > 255) throw FormatError("tensor rank exceeds 255");
  os.write(kMagic.data(), kMagic.size());
  put<std::uint16_t>(os, kVersion);
  put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<S>()));
  put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > 0xFFFFFFFFu) throw FormatError("tensor extent exceeds u32");
    put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  }
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(S)));
}

template <typename S>
Tensor<S> read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size())) throw FormatError("tensor file truncated");
  if (magic != kMagic) throw FormatError("bad tensor magic");
  if (get<std::uint16_t>(is) != kVersion) throw FormatError("unsupported tensor version");
  const auto dtype = get<std::uint8_t>(is);
  const auto rank = get<std::uint8_t>(is);
  Shape shape(rank);
  for (auto& d : shape) d = get<std::uint32_t>(is);
  switch (dtype) {
    case 0: return read_payload<float, S>(is, std::move(shape));
    case 1: return read_payload<double, S>(is, std::move(shape));
    default: throw FormatError("unknown tensor dtype " + std::to_string(dtype));
  }
}

template <typename S>
void save_tensor(const std::filesystem::path& path, const Tensor<S>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path.string());
  write_tensor(os, t);
  if (!os) throw InputError("write failed for " + path.string());
}

template <typename S>
Tensor<S> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string());
  return read_tensor<S>(is);
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);
template void save_tensor(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor(const std::filesystem::path&);
template Tensor<double> load_tensor(const std::filesystem::path&);

}  // namespace mvtf
