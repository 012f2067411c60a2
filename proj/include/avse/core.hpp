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

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace avse {

// Precondition violated by the caller (bad shapes, lengths, probabilities).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or missing input data (files, manifests, schemas).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid run configuration (unknown keys, out-of-range values).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values during training or evaluation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

inline constexpr int kSampleRate = 16000;

struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  Waveform() = default;
  explicit Waveform(std::vector<float> s, int sr = kSampleRate)
      : samples(std::move(s)), sample_rate(sr) {}
  static Waveform zeros(std::size_t n, int sr = kSampleRate) {
    return Waveform(std::vector<float>(n, 0.0f), sr);
  }

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::span<const float> view() const { return samples; }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Lip feature sequence, frame-major (frames x dims).
struct LipFeatures {
  int frames = 0;
  int dims = 0;
  double fps = 25.0;
  std::vector<float> data;

  float at(int frame, int dim) const {
    return data[static_cast<std::size_t>(frame) * dims + dim];
  }
  float& at(int frame, int dim) {
    return data[static_cast<std::size_t>(frame) * dims + dim];
  }
  double duration_s() const { return frames / fps; }
  bool empty() const { return frames == 0; }
};

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// Latent sequences are stored channels x frames: column t is frame t.
template <class T>
using Latent = Mat<T>;

using Rng = std::mt19937_64;

// Independent, order-free stream for (seed, a, b, c).
inline Rng derive_rng(std::uint64_t seed, std::uint64_t a = 0,
                      std::uint64_t b = 0, std::uint64_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a),
                    static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(c),
                    static_cast<std::uint32_t>(c >> 32)};
  return Rng(seq);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

// splitmix64 finaliser; maps ids to well-spread 64-bit values.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double unit_from_hash(std::uint64_t h) {
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

}  // namespace avse
