// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include "mvtf/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "mvtf/errors.hpp"
#include "mvtf/signal.hpp"

namespace mvtf {
namespace {

std::uint32_t u32(const std::string& b, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, b.data() + at, 4);
  return v;
}

std::uint16_t u16(const std::string& b, std::size_t at) {
  std::uint16_t v;
  std::memcpy(&v, b.data() + at, 2);
  return v;
}

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

std::vector<float> read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0) {
    throw InputError(path.string() + ": not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::uint32_t len = u32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw InputError(path.string() + ": truncated chunk " + id);
    if (id == "fmt ") {
      if (len < 16) throw InputError(path.string() + ": short fmt chunk");
      format = u16(bytes, body);
      channels = u16(bytes, body + 2);
      rate = u32(bytes, body + 4);
      bits = u16(bytes, body + 14);
      if (format == 0xFFFE && len >= 26) format = u16(bytes, body + 24);  // extensible subformat
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw InputError(path.string() + ": data before fmt");
      if (channels != 1) throw InputError(path.string() + ": expected mono audio");
      if (rate != static_cast<std::uint32_t>(kSampleRate)) {
        throw InputError(path.string() + ": sample rate " + std::to_string(rate) + " Hz, expected 16000 (no resampling)");
      }
      std::vector<float> out;
      if (format == 1 && bits == 16) {
        out.resize(len / 2);
        for (std::size_t i = 0; i < out.size(); ++i) {
          std::int16_t s;
          std::memcpy(&s, bytes.data() + body + 2 * i, 2);
          out[i] = static_cast<float>(s) / 32768.0f;
        }
      } else if (format == 3 && bits == 32) {
        out.resize(len / 4);
        std::memcpy(out.data(), bytes.data() + body, out.size() * 4);
      } else {
        throw InputError(path.string() + ": unsupported encoding (format " + std::to_string(format) + ", " +
                         std::to_string(bits) + " bits)");
      }
      return out;
    }
    pos = body + len + (len & 1u);
  }
  throw InputError(path.string() + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const std::vector<float>& samples, WavEncoding encoding) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path.string());
  const bool pcm = encoding == WavEncoding::kPcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const std::uint32_t data_len = static_cast<std::uint32_t>(samples.size() * (bits / 8));
  os.write("RIFF", 4);
  put<std::uint32_t>(os, 36 + data_len);
  os.write("WAVEfmt ", 8);
  put<std::uint32_t>(os, 16);
  put<std::uint16_t>(os, pcm ? 1 : 3);
  put<std::uint16_t>(os, 1);
  put<std::uint32_t>(os, kSampleRate);
  put<std::uint32_t>(os, kSampleRate * (bits / 8));
  put<std::uint16_t>(os, bits / 8);
  put<std::uint16_t>(os, bits);
  os.write("data", 4);
  put<std::uint32_t>(os, data_len);
  if (pcm) {
    for (float s : samples) {
      const float clamped = std::clamp(s, -1.0f, 1.0f);
      put<std::int16_t>(os, static_cast<std::int16_t>(std::lrint(clamped * 32767.0f)));
    }
  } else {
    os.write(reinterpret_cast<const char*>(samples.data()), static_cast<std::streamsize>(data_len));
  }
  if (!os) throw InputError("write failed for " + path.string());
}

}  // namespace mvtf
