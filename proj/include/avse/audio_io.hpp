// Copyright 2026 The avse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// WAV (PCM16 / float32) and lip-feature file I/O, plus a windowed-sinc
// resampler. All multi-byte fields are little-endian on disk.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "avse/core.hpp"
#include "avse/json_util.hpp"

namespace avse {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace detail {

inline void put_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}
inline void put_u16(std::ofstream& out, std::uint16_t v) {
  out.write(reinterpret_cast<const char*>(&v), 2);
}

template <class V>
V read_le(const std::vector<char>& buf, std::size_t off) {
  V v;
  std::memcpy(&v, buf.data() + off, sizeof(V));
  return v;
}

inline std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

// Float32 WAV so mixtures round-trip bit-exactly.
inline void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 4);
  out.write("RIFF", 4);
  detail::put_u32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  detail::put_u32(out, 16);
  detail::put_u16(out, 3);  // IEEE float
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 4);
  detail::put_u16(out, 4);
  detail::put_u16(out, 32);
  out.write("data", 4);
  detail::put_u32(out, data_bytes);
  out.write(reinterpret_cast<const char*>(w.samples.data()), data_bytes);
  if (!out) throw DataError("write failed: " + path);
}

// Reads mono PCM16 or float32 WAV. Multi-channel files are averaged to mono.
inline Waveform read_wav(const std::string& path) {
  const std::vector<char> buf = detail::slurp(path);
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw DataError(path + ": not a RIFF/WAVE file");
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_off = 0, data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id(buf.data() + pos, 4);
    const auto len = detail::read_le<std::uint32_t>(buf, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > buf.size() && id != "data")
      throw DataError(path + ": truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (len < 16) throw DataError(path + ": short fmt chunk");
      format = detail::read_le<std::uint16_t>(buf, body);
      channels = detail::read_le<std::uint16_t>(buf, body + 2);
      rate = detail::read_le<std::uint32_t>(buf, body + 4);
      bits = detail::read_le<std::uint16_t>(buf, body + 14);
      if (format == 0xFFFE && len >= 26)
        format = detail::read_le<std::uint16_t>(buf, body + 24);
    } else if (id == "data") {
      data_off = body;
      data_len = std::min<std::size_t>(len, buf.size() - body);
      break;
    }
    pos = body + len + (len & 1);
  }
  if (channels == 0 || rate == 0) throw DataError(path + ": missing fmt chunk");
  if (data_off == 0) throw DataError(path + ": missing data chunk");

  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32)
    throw DataError(path + ": unsupported encoding (format " +
                    std::to_string(format) + ", " + std::to_string(bits) +
                    " bits); expected PCM16 or float32");
  const std::size_t width = bits / 8;
  const std::size_t frames = data_len / (width * channels);
  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(frames);
  for (std::size_t n = 0; n < frames; ++n) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = data_off + (n * channels + c) * width;
      acc += pcm16 ? detail::read_le<std::int16_t>(buf, off) / 32768.0
                   : static_cast<double>(detail::read_le<float>(buf, off));
    }
    w.samples[n] = static_cast<float>(acc / channels);
  }
  return w;
}

// Band-limited resampling with a Hann-windowed sinc kernel.
inline Waveform resample(const Waveform& in, int target_rate) {
  if (in.sample_rate <= 0 || target_rate <= 0)
    throw DataError("invalid sample rate conversion " +
                    std::to_string(in.sample_rate) + " -> " +
                    std::to_string(target_rate));
  if (in.sample_rate == target_rate) return in;
  const double ratio = static_cast<double>(target_rate) / in.sample_rate;
  const auto out_len =
      static_cast<std::size_t>(std::llround(in.samples.size() * ratio));
  const double cutoff = std::min(1.0, ratio);
  constexpr int kZeroCrossings = 16;
  const double half_width = kZeroCrossings / cutoff;
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  const auto n_in = static_cast<std::ptrdiff_t>(in.samples.size());
  for (std::size_t n = 0; n < out_len; ++n) {
    const double centre = static_cast<double>(n) / ratio;
    const auto lo = std::max<std::ptrdiff_t>(
        0, static_cast<std::ptrdiff_t>(std::ceil(centre - half_width)));
    const auto hi = std::min<std::ptrdiff_t>(
        n_in - 1, static_cast<std::ptrdiff_t>(std::floor(centre + half_width)));
    double acc = 0.0;
    for (std::ptrdiff_t k = lo; k <= hi; ++k) {
      const double x = centre - static_cast<double>(k);
      const double arg = std::numbers::pi * cutoff * x;
      const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(arg) / arg;
      const double win =
          0.5 + 0.5 * std::cos(std::numbers::pi * x / half_width);
      acc += in.samples[static_cast<std::size_t>(k)] * cutoff * sinc * win;
    }
    out.samples[n] = static_cast<float>(acc);
  }
  return out;
}

inline std::string lip_sidecar_path(const std::string& raw_path) {
  return raw_path + ".json";
}

// Raw float32 frames x dims matrix plus a JSON sidecar {frames, dims, fps}.
inline void write_lip_features(const std::string& path, const LipFeatures& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(f.data.data()),
            static_cast<std::streamsize>(f.data.size() * sizeof(float)));
  if (!out) throw DataError("write failed: " + path);
  write_json_file(lip_sidecar_path(path),
                  json{{"frames", f.frames}, {"dims", f.dims}, {"fps", f.fps}});
}

inline LipFeatures read_lip_features(const std::string& path) {
  const json meta = read_json_file(lip_sidecar_path(path));
  LipFeatures f;
  try {
    StrictReader r(meta, lip_sidecar_path(path));
    r.required("frames", f.frames);
    r.required("dims", f.dims);
    r.required("fps", f.fps);
    r.finish();
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  if (f.frames < 0 || f.dims < 1 || !(f.fps > 0))
    throw DataError(path + ": invalid lip feature header");
  const std::vector<char> buf = detail::slurp(path);
  const std::size_t expect =
      static_cast<std::size_t>(f.frames) * f.dims * sizeof(float);
  if (buf.size() != expect)
    throw DataError(path + ": expected " + std::to_string(expect) +
                    " bytes, found " + std::to_string(buf.size()));
  f.data.resize(static_cast<std::size_t>(f.frames) * f.dims);
  std::memcpy(f.data.data(), buf.data(), expect);
  return f;
}

}  // namespace avse
