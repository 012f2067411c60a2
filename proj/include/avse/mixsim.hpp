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

// Training-data simulation: SNR-controlled mixing of an on-screen target,
// a cropped off-screen target and interferers; oracle activity labels; the
// muting augmentation; a synthetic speaker/noise generator standing in for
// real corpora; and manifest ingestion for local WAV collections.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "avse/audio_io.hpp"
#include "avse/core.hpp"
#include "avse/json_util.hpp"
#include "avse/layers.hpp"
#include "avse/metrics.hpp"

namespace avse {

enum class SourceKind { on_screen, off_screen, noise };
enum class InterferenceMode { noise, spk, noise_spk, two_spk };
enum class MuteFlag { none, on, off };

NLOHMANN_JSON_SERIALIZE_ENUM(SourceKind, {{SourceKind::on_screen, "on_screen"},
                                          {SourceKind::off_screen, "off_screen"},
                                          {SourceKind::noise, "noise"}})
NLOHMANN_JSON_SERIALIZE_ENUM(InterferenceMode,
                             {{InterferenceMode::noise, "noise"},
                              {InterferenceMode::spk, "spk"},
                              {InterferenceMode::noise_spk, "noise+spk"},
                              {InterferenceMode::two_spk, "2spk"}})
NLOHMANN_JSON_SERIALIZE_ENUM(MuteFlag, {{MuteFlag::none, "none"},
                                        {MuteFlag::on, "on"},
                                        {MuteFlag::off, "off"}})

inline std::string mode_name(InterferenceMode m) { return json(m).get<std::string>(); }

struct SourceClip {
  std::string clip_id;
  Waveform wave;
  std::optional<std::string> speaker_id;  // empty for noise
  LipFeatures lips;                       // on-screen clips only
  SourceKind kind = SourceKind::noise;
};

struct MixSpec {
  double window_s = 4.0;
  std::array<double, 2> snr_range_db{-2.5, 2.5};
  std::array<double, 2> off_duration_range_s{2.0, 4.0};
  std::array<double, 2> test_off_duration_range_s{0.0, 4.0};
  InterferenceMode interference_mode = InterferenceMode::noise;
  std::uint64_t seed = 1;
  // Latent frame layout used for the oracle activity labels.
  int frame_window = 32;
  int frame_hop = 16;
  int sample_rate = kSampleRate;
  double video_fps = 25.0;
  int lip_dim = 8;

  std::size_t window_samples() const {
    return static_cast<std::size_t>(std::llround(window_s * sample_rate));
  }
  int window_video_frames() const {
    return static_cast<int>(std::llround(window_s * video_fps));
  }
  int num_frames() const {
    return nn::frame_count(window_samples(), frame_window, frame_hop);
  }

  void validate() const {
    auto range_ok = [](const std::array<double, 2>& r) { return r[0] <= r[1]; };
    if (!(window_s > 0)) throw ConfigError("mix.window_s must be > 0");
    if (!range_ok(snr_range_db)) throw ConfigError("mix.snr_range_db: lo > hi");
    if (!range_ok(off_duration_range_s) || off_duration_range_s[0] < 0)
      throw ConfigError("mix.off_duration_range_s must satisfy 0 <= lo <= hi");
    if (!range_ok(test_off_duration_range_s) || test_off_duration_range_s[0] < 0)
      throw ConfigError("mix.test_off_duration_range_s must satisfy 0 <= lo <= hi");
    if (frame_window < 1 || frame_hop < 1 || frame_hop > frame_window)
      throw ConfigError("mix frame layout must satisfy 1 <= hop <= window");
    if (lip_dim < 4) throw ConfigError("mix.lip_dim must be >= 4");
    const double frames = window_s * video_fps;
    if (std::abs(frames - std::round(frames)) > 1e-9)
      throw ConfigError("mix.window_s must span a whole number of video frames");
    const double spf = sample_rate / video_fps;
    if (std::abs(spf - std::round(spf)) > 1e-9)
      throw ConfigError("sample_rate / video_fps must be an integer");
  }
};

inline void to_json(json& j, const MixSpec& s) {
  j = json{{"window_s", s.window_s},
           {"snr_range_db", s.snr_range_db},
           {"off_duration_range_s", s.off_duration_range_s},
           {"test_off_duration_range_s", s.test_off_duration_range_s},
           {"interference_mode", s.interference_mode},
           {"seed", s.seed},
           {"frame_window", s.frame_window},
           {"frame_hop", s.frame_hop},
           {"sample_rate", s.sample_rate},
           {"video_fps", s.video_fps},
           {"lip_dim", s.lip_dim}};
}

inline MixSpec mix_spec_from_json(const json& j, MixSpec s = {}) {
  StrictReader r(j, "mix");
  r.optional("window_s", s.window_s);
  r.optional("snr_range_db", s.snr_range_db);
  r.optional("off_duration_range_s", s.off_duration_range_s);
  r.optional("test_off_duration_range_s", s.test_off_duration_range_s);
  r.optional("interference_mode", s.interference_mode);
  r.optional("seed", s.seed);
  r.optional("frame_window", s.frame_window);
  r.optional("frame_hop", s.frame_hop);
  r.optional("sample_rate", s.sample_rate);
  r.optional("video_fps", s.video_fps);
  r.optional("lip_dim", s.lip_dim);
  r.finish();
  s.validate();
  return s;
}

// Half-open sample interval [start, end) inside the mixing window.
struct Interval {
  std::size_t start = 0;
  std::size_t end = 0;

  bool empty() const { return end <= start; }
  std::size_t length() const { return empty() ? 0 : end - start; }
  double start_s(int sr) const { return static_cast<double>(start) / sr; }
  double end_s(int sr) const { return static_cast<double>(end) / sr; }
};

struct SampleMeta {
  std::string id;
  InterferenceMode mode = InterferenceMode::noise;
  std::optional<double> snr_off_db;  // absent when the off-screen crop is empty
  std::vector<double> snr_interferers_db;
  std::vector<std::string> interferer_ids;
  std::vector<SourceKind> interferer_kinds;
  Interval off_interval;
  MuteFlag mute = MuteFlag::none;
  std::string on_id;
  std::string off_id;
  std::string enrollment_id;
  std::string on_speaker;
  std::string off_speaker;
  double scale = 1.0;  // power-of-two headroom factor applied to every source
};

inline json meta_to_json(const SampleMeta& m, int sample_rate) {
  return json{{"id", m.id},
           {"interference_mode", m.mode},
           {"snr_off_db", m.snr_off_db ? json(*m.snr_off_db) : json(nullptr)},
           {"snr_interferers_db", m.snr_interferers_db},
           {"interferer_ids", m.interferer_ids},
           {"interferer_kinds", m.interferer_kinds},
           {"off_interval_samples", {m.off_interval.start, m.off_interval.end}},
           {"off_interval_s",
            {m.off_interval.start_s(sample_rate), m.off_interval.end_s(sample_rate)}},
           {"mute", m.mute},
           {"on_id", m.on_id},
           {"off_id", m.off_id},
           {"enrollment_id", m.enrollment_id},
           {"on_speaker", m.on_speaker},
           {"off_speaker", m.off_speaker},
           {"scale", m.scale}};
}

struct MixtureSample {
  Waveform mix;
  Waveform target;  // on_screen + off_screen
  Waveform on_screen;
  Waveform off_screen;    // placed and scaled
  Waveform interference;  // sum of scaled interferers
  Waveform enrollment;
  LipFeatures lips;
  VadSequence oracle_vad;
  SampleMeta meta;
};

// ---------------------------------------------------------------------------
// Mixing primitives.

namespace detail {

inline double mean_power(std::span<const float> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return acc / static_cast<double>(x.size());
}

// Values on a 2^-20 grid with magnitude < 8 are exact in float32 and so are
// their sums and differences, which makes mixing and muting sample-exact.
inline constexpr double kGrid = 1048576.0;
inline float snap(double v) { return static_cast<float>(std::round(v * kGrid) / kGrid); }

}  // namespace detail

// g * signal with 10 log10(P_ref / P_scaled) = snr_db; powers are mean
// squares over the shared window.
inline Waveform scale_to_snr(const Waveform& signal, const Waveform& reference,
                             double snr_db) {
  require(signal.size() == reference.size(),
          "scale_to_snr inputs must span the same window");
  const double p_sig = detail::mean_power(signal.view());
  const double p_ref = detail::mean_power(reference.view());
  require(p_sig > 0.0, "scale_to_snr: signal has zero power");
  require(p_ref > 0.0, "scale_to_snr: reference has zero power");
  const double gain = std::sqrt(p_ref / (p_sig * std::pow(10.0, snr_db / 10.0)));
  Waveform out = signal;
  for (auto& v : out.samples) v = static_cast<float>(v * gain);
  return out;
}

inline double measured_snr_db(const Waveform& reference, const Waveform& scaled) {
  return 10.0 * std::log10(detail::mean_power(reference.view()) /
                           detail::mean_power(scaled.view()));
}

struct Placement {
  Waveform placed;
  Interval interval;
};

// Crops a random-duration segment from `off` and places it at a uniformly
// drawn feasible offset inside a zero window.
inline Placement crop_and_place(const Waveform& off,
                                const std::array<double, 2>& duration_range_s,
                                double window_s, Rng& rng) {
  require(duration_range_s[0] >= 0 && duration_range_s[0] <= duration_range_s[1],
          "duration range must satisfy 0 <= lo <= hi");
  const int sr = off.sample_rate;
  const auto window = static_cast<std::size_t>(std::llround(window_s * sr));
  const double dur = duration_range_s[0] == duration_range_s[1]
                         ? duration_range_s[0]
                         : uniform(rng, duration_range_s[0], duration_range_s[1]);
  std::size_t n = static_cast<std::size_t>(std::llround(dur * sr));
  n = std::min({n, off.size(), window});
  Placement p;
  p.placed = Waveform::zeros(window, sr);
  if (n == 0) return p;
  const std::size_t src = std::uniform_int_distribution<std::size_t>(0, off.size() - n)(rng);
  const std::size_t dst = std::uniform_int_distribution<std::size_t>(0, window - n)(rng);
  std::copy_n(off.samples.begin() + static_cast<std::ptrdiff_t>(src), n,
              p.placed.samples.begin() + static_cast<std::ptrdiff_t>(dst));
  p.interval = {dst, dst + n};
  return p;
}

// Frame t spans samples [t*hop, t*hop + window); it is active iff that span
// intersects the interval.
inline VadSequence oracle_vad(const Interval& interval, int frames, int window,
                              int hop) {
  require(frames >= 1, "oracle_vad needs at least one frame");
  VadSequence v;
  v.kind = VadKind::oracle;
  v.values.assign(static_cast<std::size_t>(frames), 0.0f);
  if (interval.empty()) return v;
  for (int t = 0; t < frames; ++t) {
    const std::size_t s = static_cast<std::size_t>(t) * hop;
    if (s < interval.end && s + window > interval.start) v.values[t] = 1.0f;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Synthetic sources.

struct VoiceProfile {
  double f0 = 120.0;
  double tract_scale = 1.0;  // formant frequency multiplier
  double tilt = 1.0;         // harmonic roll-off exponent
  double vibrato_hz = 5.0;
};

// Fundamentals follow the golden-ratio sequence, so distinct ids never
// share a fundamental.
inline VoiceProfile voice_profile(std::uint64_t speaker) {
  VoiceProfile v;
  const long double golden = 0.61803398874989484820L;
  const long double frac = std::fmod(static_cast<long double>(speaker) * golden, 1.0L);
  v.f0 = 90.0 + 160.0 * static_cast<double>(frac);
  v.tract_scale = 0.85 + 0.35 * unit_from_hash(mix64(speaker * 4 + 1));
  v.tilt = 0.6 + 0.8 * unit_from_hash(mix64(speaker * 4 + 2));
  v.vibrato_hz = 3.0 + 4.0 * unit_from_hash(mix64(speaker * 4 + 3));
  return v;
}

namespace detail {

struct Vowel {
  double f1, f2, f3;
  double open, round;
};

inline constexpr std::array<Vowel, 5> kVowels{{
    {730, 1090, 2440, 1.0, 0.1},
    {530, 1840, 2480, 0.6, 0.2},
    {270, 2290, 3010, 0.3, 0.0},
    {570, 840, 2410, 0.7, 0.8},
    {300, 870, 2240, 0.4, 1.0},
}};

struct Syllable {
  std::size_t start, end;
  int vowel;
  double amp;
  double pitch;
  bool phrase_start = false;
  bool phrase_end = false;
};

inline std::string hex_id(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 15];
  return s;
}

inline void normalise_rms(std::vector<float>& x, double rms) {
  const double p = mean_power(x);
  if (p <= 0) return;
  const double g = rms / std::sqrt(p);
  for (auto& v : x) v = static_cast<float>(v * g);
}

// Low-dimensional visual stream: envelope, its delta, mouth opening and
// rounding, then fixed mixtures of those.
inline LipFeatures lip_stream(const std::vector<double>& env,
                              const std::vector<int>& vowel_at, int sr,
                              double fps, int dims, Rng& rng) {
  LipFeatures f;
  f.fps = fps;
  f.dims = dims;
  f.frames = static_cast<int>(std::llround(env.size() * fps / sr));
  f.data.assign(static_cast<std::size_t>(f.frames) * dims, 0.0f);
  const double spf = sr / fps;
  double prev = 0.0;
  for (int k = 0; k < f.frames; ++k) {
    const auto a = static_cast<std::size_t>(k * spf);
    const auto b = std::min(env.size(), static_cast<std::size_t>((k + 1) * spf));
    double e = 0.0;
    for (std::size_t n = a; n < b; ++n) e += env[n];
    e = b > a ? e / static_cast<double>(b - a) : 0.0;
    const int v = vowel_at[std::min(env.size() - 1, (a + b) / 2)];
    const auto& vw = kVowels[static_cast<std::size_t>(std::max(v, 0))];
    const double gate = std::min(1.0, e / 0.05);
    const std::array<double, 4> base{e, e - prev, e * vw.open, gate * vw.round};
    prev = e;
    for (int d = 0; d < dims; ++d) {
      double val = 0.0;
      if (d < 4) {
        val = base[d];
      } else {
        for (int i = 0; i < 4; ++i)
          val += (2.0 * unit_from_hash(mix64(static_cast<std::uint64_t>(d) * 8 + i)) - 1.0) *
                 base[i];
      }
      f.at(k, d) = static_cast<float>(val + 0.02 * gaussian(rng));
    }
  }
  return f;
}

}  // namespace detail

// Harmonic voice with speaker-specific pitch and formants; content (syllable
// timing, vowels, intonation) comes from the rng.
inline SourceClip synth_speaker_clip(std::uint64_t speaker_id, double duration_s,
                                     Rng& rng,
                                     SourceKind kind = SourceKind::on_screen,
                                     int lip_dim = 8, double fps = 25.0,
                                     int sr = kSampleRate) {
  require(duration_s > 0, "clip duration must be positive");
  require(kind != SourceKind::noise, "speaker clips cannot be noise");
  const std::uint64_t content = rng();
  Rng crng(content);
  const VoiceProfile voice = voice_profile(speaker_id);
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sr));

  // Connected speech: phrases of 4-10 syllables without silence inside,
  // separated by short pauses.
  std::vector<detail::Syllable> syl;
  std::size_t pos = static_cast<std::size_t>(uniform(crng, 0.0, 0.1) * sr);
  while (pos < n) {
    const int count = 4 + static_cast<int>(crng() % 7);
    for (int k = 0; k < count && pos < n; ++k) {
      detail::Syllable s;
      s.start = pos;
      s.end = std::min(n, pos + static_cast<std::size_t>(uniform(crng, 0.12, 0.3) * sr));
      s.vowel = static_cast<int>(crng() % detail::kVowels.size());
      s.amp = uniform(crng, 0.5, 1.0);
      s.pitch = uniform(crng, -0.1, 0.1);
      s.phrase_start = k == 0;
      s.phrase_end = k == count - 1;
      syl.push_back(s);
      pos = s.end;
    }
    pos += static_cast<std::size_t>(uniform(crng, 0.08, 0.2) * sr);
  }
  if (!syl.empty()) syl.back().phrase_end = true;

  constexpr double kFloor = 0.3;  // voiced transitions between syllables
  const double ramp = 0.03 * sr;
  std::vector<double> env(n, 0.0);
  std::vector<int> vowel_at(n, -1);
  std::vector<double> pitch_at(n, 0.0);
  for (const auto& s : syl) {
    const double len = static_cast<double>(s.end - s.start);
    for (std::size_t i = s.start; i < s.end; ++i) {
      const double u = (static_cast<double>(i - s.start) + 0.5) / len;
      double g = 1.0;
      if (s.phrase_start) g = std::min(g, (static_cast<double>(i - s.start) + 0.5) / ramp);
      if (s.phrase_end) g = std::min(g, (static_cast<double>(s.end - i) - 0.5) / ramp);
      env[i] = g * s.amp * (kFloor + (1.0 - kFloor) * std::sin(std::numbers::pi * u));
      vowel_at[i] = s.vowel;
      pitch_at[i] = s.pitch;
    }
  }
  int last = 0;
  for (auto& v : vowel_at) {
    if (v < 0) v = last;
    last = v;
  }

  constexpr std::size_t kControl = 32;
  constexpr double kNyquistLimit = 5000.0;
  const double vib_phase = uniform(crng, 0.0, 2.0 * std::numbers::pi);
  std::vector<float> out(n, 0.0f);
  std::vector<double> amps;
  double phase = 0.0;
  for (std::size_t b = 0; b < n; b += kControl) {
    const std::size_t e = std::min(n, b + kControl);
    const double t = static_cast<double>(b) / sr;
    const double f0 = voice.f0 * (1.0 + pitch_at[b] +
                                  0.03 * std::sin(2 * std::numbers::pi * voice.vibrato_hz * t + vib_phase));
    const auto& vw = detail::kVowels[static_cast<std::size_t>(vowel_at[b])];
    const std::array<double, 3> formants{vw.f1 * voice.tract_scale, vw.f2 * voice.tract_scale,
                                         vw.f3 * voice.tract_scale};
    const std::array<double, 3> bw{90.0, 130.0, 180.0};
    const int harmonics = std::max(1, static_cast<int>(kNyquistLimit / f0));
    amps.assign(static_cast<std::size_t>(harmonics), 0.0);
    for (int k = 1; k <= harmonics; ++k) {
      const double fk = k * f0;
      double a = 0.08 * std::pow(k, -voice.tilt);
      for (int i = 0; i < 3; ++i) {
        const double d = (fk - formants[i]) / bw[i];
        a += (i == 0 ? 1.0 : 0.6 / i) * std::exp(-0.5 * d * d);
      }
      amps[static_cast<std::size_t>(k - 1)] = a;
    }
    const double dphase = 2.0 * std::numbers::pi * f0 / sr;
    for (std::size_t i = b; i < e; ++i) {
      phase += dphase;
      if (env[i] > 0.0) {
        // sin(k x) by the Chebyshev recurrence.
        const double c2 = 2.0 * std::cos(phase);
        double s_prev = 0.0, s_cur = std::sin(phase), acc = 0.0;
        for (int k = 0; k < harmonics; ++k) {
          acc += amps[static_cast<std::size_t>(k)] * s_cur;
          const double s_next = c2 * s_cur - s_prev;
          s_prev = s_cur;
          s_cur = s_next;
        }
        out[i] = static_cast<float>(env[i] * acc);
      }
    }
    phase = std::fmod(phase, 2.0 * std::numbers::pi);
  }
  detail::normalise_rms(out, 0.1);
  // Breath floor keeps the waveform non-zero across pauses.
  for (auto& v : out) v += static_cast<float>(1e-3 * gaussian(crng));

  SourceClip clip;
  clip.clip_id = "spk" + std::to_string(speaker_id) + "-" + detail::hex_id(content);
  clip.speaker_id = std::to_string(speaker_id);
  clip.kind = kind;
  clip.wave = Waveform(std::move(out), sr);
  if (kind == SourceKind::on_screen)
    clip.lips = detail::lip_stream(env, vowel_at, sr, fps, lip_dim, crng);
  return clip;
}

// Environmental noise: coloured noise, hum, bursts or alarm tones.
inline SourceClip synth_noise_clip(double duration_s, Rng& rng, int sr = kSampleRate) {
  require(duration_s > 0, "clip duration must be positive");
  const std::uint64_t content = rng();
  Rng crng(content);
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sr));
  std::vector<double> acc(n, 0.0);
  const int layers = 1 + static_cast<int>(crng() % 2);
  for (int l = 0; l < layers; ++l) {
    const int type = static_cast<int>(crng() % 4);
    std::vector<double> x(n, 0.0);
    switch (type) {
      case 0: {  // one-pole coloured noise, low- or high-passed
        const double fc = uniform(crng, 200.0, 4000.0);
        const double a = std::exp(-2.0 * std::numbers::pi * fc / sr);
        const bool high = crng() % 2;
        double y = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double w = gaussian(crng);
          y = (1 - a) * w + a * y;
          x[i] = high ? w - y : y;
        }
        break;
      }
      case 1: {  // mains/engine hum
        const double f = uniform(crng, 40.0, 120.0);
        for (std::size_t i = 0; i < n; ++i) {
          const double t = static_cast<double>(i) / sr;
          double v = 0.0;
          for (int k = 1; k <= 10; ++k) v += std::sin(2 * std::numbers::pi * k * f * t) / k;
          x[i] = v + 0.3 * gaussian(crng);
        }
        break;
      }
      case 2: {  // gated white bursts
        std::size_t i = 0;
        while (i < n) {
          const auto on = static_cast<std::size_t>(uniform(crng, 0.05, 0.3) * sr);
          const auto off = static_cast<std::size_t>(uniform(crng, 0.02, 0.4) * sr);
          const double amp = uniform(crng, 0.3, 1.0);
          for (std::size_t k = i; k < std::min(n, i + on); ++k) x[k] = amp * gaussian(crng);
          i += on + off;
        }
        break;
      }
      default: {  // two-tone alarm
        const double fa = uniform(crng, 600.0, 2000.0);
        const double fb = fa * uniform(crng, 1.1, 1.5);
        const double rate = uniform(crng, 1.0, 4.0);
        double ph = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double t = static_cast<double>(i) / sr;
          const double f = std::fmod(t * rate, 1.0) < 0.5 ? fa : fb;
          ph += 2 * std::numbers::pi * f / sr;
          x[i] = std::sin(ph) + 0.05 * gaussian(crng);
        }
        break;
      }
    }
    double p = 0.0;
    for (double v : x) p += v * v;
    const double g = p > 0 ? 1.0 / std::sqrt(p / static_cast<double>(n)) : 0.0;
    for (std::size_t i = 0; i < n; ++i) acc[i] += g * x[i];
  }
  std::vector<float> out(acc.begin(), acc.end());
  detail::normalise_rms(out, 0.1);
  SourceClip clip;
  clip.clip_id = "noise-" + detail::hex_id(content);
  clip.kind = SourceKind::noise;
  clip.wave = Waveform(std::move(out), sr);
  return clip;
}

// ---------------------------------------------------------------------------
// Sample assembly and muting.

namespace detail {

inline Waveform window_crop(const Waveform& w, std::size_t offset, std::size_t len) {
  Waveform out = Waveform::zeros(len, w.sample_rate);
  const std::size_t avail = offset < w.size() ? std::min(len, w.size() - offset) : 0;
  std::copy_n(w.samples.begin() + static_cast<std::ptrdiff_t>(offset), avail,
              out.samples.begin());
  return out;
}

inline void snap_all(Waveform& w) {
  for (auto& v : w.samples) v = snap(v);
}

inline void check_interferers(const std::vector<SourceClip>& interferers,
                              InterferenceMode mode) {
  int noise = 0, speech = 0;
  for (const auto& c : interferers) (c.kind == SourceKind::noise ? noise : speech)++;
  int want_noise = 0, want_speech = 0;
  switch (mode) {
    case InterferenceMode::noise: want_noise = 1; break;
    case InterferenceMode::spk: want_speech = 1; break;
    case InterferenceMode::noise_spk: want_noise = want_speech = 1; break;
    case InterferenceMode::two_spk: want_speech = 2; break;
  }
  require(noise == want_noise && speech == want_speech,
          "interferers do not match interference mode " + mode_name(mode));
}

inline Waveform sum_of(const Waveform& a, const Waveform& b) {
  Waveform out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.samples[i] += b.samples[i];
  return out;
}

}  // namespace detail

// `off_range_s` defaults to spec.off_duration_range_s.
inline MixtureSample make_sample(const SourceClip& on, const SourceClip& off,
                                 const std::vector<SourceClip>& interferers,
                                 const SourceClip& enrollment, const MixSpec& spec,
                                 Rng& rng,
                                 std::optional<std::array<double, 2>> off_range_s = {}) {
  spec.validate();
  require(on.kind == SourceKind::on_screen, "on-screen source has wrong kind");
  require(!on.lips.empty(), "on-screen source has no lip features");
  require(off.kind == SourceKind::off_screen && off.speaker_id,
          "off-screen source needs a speaker id");
  require(enrollment.speaker_id == off.speaker_id,
          "enrollment speaker differs from the off-screen speaker");
  require(enrollment.clip_id != off.clip_id,
          "enrollment must be a different utterance from the off-screen clip");
  detail::check_interferers(interferers, spec.interference_mode);
  for (const auto& c : interferers)
    require(!c.speaker_id || (c.speaker_id != on.speaker_id && c.speaker_id != off.speaker_id),
            "interfering speaker coincides with a target speaker");

  const int sr = spec.sample_rate;
  const std::size_t n = spec.window_samples();
  const int video_frames = spec.window_video_frames();
  const auto spf = static_cast<std::size_t>(std::llround(sr / spec.video_fps));
  require(on.wave.size() >= n && on.lips.frames >= video_frames,
          "on-screen clip shorter than the mixing window");
  require(on.lips.dims == spec.lip_dim, "lip feature width differs from mix.lip_dim");

  MixtureSample s;
  s.meta.mode = spec.interference_mode;

  // On-screen: video-frame aligned crop.
  const std::size_t max_k = std::min((on.wave.size() - n) / spf,
                                     static_cast<std::size_t>(on.lips.frames - video_frames));
  const std::size_t k0 = std::uniform_int_distribution<std::size_t>(0, max_k)(rng);
  s.on_screen = detail::window_crop(on.wave, k0 * spf, n);
  detail::snap_all(s.on_screen);
  s.lips.fps = on.lips.fps;
  s.lips.dims = on.lips.dims;
  s.lips.frames = video_frames;
  s.lips.data.assign(on.lips.data.begin() + static_cast<std::ptrdiff_t>(k0 * on.lips.dims),
                     on.lips.data.begin() +
                         static_cast<std::ptrdiff_t>((k0 + video_frames) * on.lips.dims));

  // Off-screen: crop, place, scale.
  Placement placed = crop_and_place(off.wave, off_range_s.value_or(spec.off_duration_range_s),
                                    spec.window_s, rng);
  s.meta.off_interval = placed.interval;
  if (!placed.interval.empty()) {
    const double snr = uniform(rng, spec.snr_range_db[0], spec.snr_range_db[1]);
    s.off_screen = scale_to_snr(placed.placed, s.on_screen, snr);
    detail::snap_all(s.off_screen);
    s.meta.snr_off_db = snr;
  } else {
    s.off_screen = Waveform::zeros(n, sr);
  }

  s.interference = Waveform::zeros(n, sr);
  for (const auto& c : interferers) {
    require(c.wave.size() >= n, "interferer shorter than the mixing window");
    const std::size_t off_k =
        std::uniform_int_distribution<std::size_t>(0, c.wave.size() - n)(rng);
    Waveform w = detail::window_crop(c.wave, off_k, n);
    const double snr = uniform(rng, spec.snr_range_db[0], spec.snr_range_db[1]);
    w = scale_to_snr(w, s.on_screen, snr);
    detail::snap_all(w);
    s.meta.snr_interferers_db.push_back(snr);
    s.meta.interferer_ids.push_back(c.clip_id);
    s.meta.interferer_kinds.push_back(c.kind);
    s.interference = detail::sum_of(s.interference, w);
  }

  s.target = detail::sum_of(s.on_screen, s.off_screen);
  s.mix = detail::sum_of(s.target, s.interference);
  // Headroom: halving is exact on the grid and keeps |x| < 8.
  auto peak = [](const Waveform& w) {
    float m = 0.0f;
    for (float v : w.samples) m = std::max(m, std::abs(v));
    return m;
  };
  while (std::max({peak(s.mix), peak(s.target), peak(s.interference)}) >= 4.0f) {
    for (Waveform* w : {&s.mix, &s.target, &s.on_screen, &s.off_screen, &s.interference})
      for (auto& v : w->samples) v *= 0.5f;
    s.meta.scale *= 0.5;
  }

  s.enrollment = detail::window_crop(enrollment.wave, 0, std::min(n, enrollment.wave.size()));
  s.oracle_vad = oracle_vad(s.meta.off_interval, spec.num_frames(), spec.frame_window,
                            spec.frame_hop);
  s.meta.on_id = on.clip_id;
  s.meta.off_id = off.clip_id;
  s.meta.enrollment_id = enrollment.clip_id;
  s.meta.on_speaker = on.speaker_id.value_or("");
  s.meta.off_speaker = off.speaker_id.value_or("");
  return s;
}

// Single mutually exclusive draw: on-screen muted with p_on, off-screen with
// p_off, otherwise unchanged. Clues are left intact.
inline MixtureSample apply_muting(MixtureSample s, double p_on, double p_off, Rng& rng) {
  require(p_on >= 0 && p_off >= 0 && p_on <= 1 && p_off <= 1,
          "muting probabilities must lie in [0,1]");
  require(p_on + p_off <= 1.0 + 1e-12, "p_on + p_off must not exceed 1");
  const double u = uniform(rng, 0.0, 1.0);
  if (u < p_on) {
    s.on_screen = Waveform::zeros(s.mix.size(), s.mix.sample_rate);
    s.target = s.off_screen;
    s.mix = detail::sum_of(s.off_screen, s.interference);
    s.meta.mute = MuteFlag::on;
  } else if (u < p_on + p_off) {
    s.off_screen = Waveform::zeros(s.mix.size(), s.mix.sample_rate);
    s.target = s.on_screen;
    s.mix = detail::sum_of(s.on_screen, s.interference);
    std::fill(s.oracle_vad.values.begin(), s.oracle_vad.values.end(), 0.0f);
    s.meta.mute = MuteFlag::off;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Source banks and dataset generation.

enum class Split { train, val, test };

inline std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

// Supplies source clips for one split.
class SourceBank {
 public:
  virtual ~SourceBank() = default;
  virtual SourceClip on_screen(Rng& rng, double min_duration_s) const = 0;
  virtual SourceClip off_screen(Rng& rng, double duration_s) const = 0;
  virtual SourceClip enrollment_for(const SourceClip& off, Rng& rng,
                                    double duration_s) const = 0;
  virtual SourceClip noise(Rng& rng, double duration_s) const = 0;
  virtual SourceClip interfering_speech(Rng& rng, double duration_s,
                                        const std::vector<std::string>& exclude) const = 0;
  virtual std::vector<std::string> speakers() const = 0;
};

// Synthetic speakers; on-screen and off-screen pools are disjoint id ranges
// and the test split uses ranges unseen in train/val.
class SyntheticBank : public SourceBank {
 public:
  SyntheticBank(Split split, int lip_dim, double fps = 25.0, int sr = kSampleRate)
      : lip_dim_(lip_dim), fps_(fps), sr_(sr) {
    const bool test = split == Split::test;
    on_base_ = test ? 500000 : 0;
    on_count_ = test ? 118 : 800;
    off_base_ = test ? 1500000 : 1000000;
    off_count_ = test ? 18 : 101;
  }

  SourceClip on_screen(Rng& rng, double d) const override {
    return synth_speaker_clip(on_base_ + rng() % on_count_, d, rng, SourceKind::on_screen,
                              lip_dim_, fps_, sr_);
  }
  SourceClip off_screen(Rng& rng, double d) const override {
    return synth_speaker_clip(off_base_ + rng() % off_count_, d, rng, SourceKind::off_screen,
                              lip_dim_, fps_, sr_);
  }
  SourceClip enrollment_for(const SourceClip& off, Rng& rng, double d) const override {
    const std::uint64_t id = std::stoull(*off.speaker_id);
    SourceClip c = synth_speaker_clip(id, d, rng, SourceKind::off_screen, lip_dim_, fps_, sr_);
    while (c.clip_id == off.clip_id)
      c = synth_speaker_clip(id, d, rng, SourceKind::off_screen, lip_dim_, fps_, sr_);
    return c;
  }
  SourceClip noise(Rng& rng, double d) const override { return synth_noise_clip(d, rng, sr_); }
  SourceClip interfering_speech(Rng& rng, double d,
                                const std::vector<std::string>& exclude) const override {
    for (;;) {
      const bool from_on = rng() % 2 == 0;
      const std::uint64_t id =
          from_on ? on_base_ + rng() % on_count_ : off_base_ + rng() % off_count_;
      if (std::find(exclude.begin(), exclude.end(), std::to_string(id)) != exclude.end())
        continue;
      return synth_speaker_clip(id, d, rng, SourceKind::off_screen, lip_dim_, fps_, sr_);
    }
  }
  std::vector<std::string> speakers() const override {
    std::vector<std::string> out;
    for (std::uint64_t i = 0; i < on_count_; ++i) out.push_back(std::to_string(on_base_ + i));
    for (std::uint64_t i = 0; i < off_count_; ++i) out.push_back(std::to_string(off_base_ + i));
    return out;
  }

 private:
  int lip_dim_;
  double fps_;
  int sr_;
  std::uint64_t on_base_, on_count_, off_base_, off_count_;
};

// One clip per manifest line: {path, speaker_id, kind, lip_path?}. Relative
// paths resolve against the manifest's directory. Audio is resampled to
// `sample_rate` mono.
inline std::vector<SourceClip> load_corpus(const std::string& manifest_path,
                                           int sample_rate = kSampleRate) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path);
  const auto base = std::filesystem::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return (fp.is_absolute() ? fp : base / fp).string();
  };
  std::vector<SourceClip> clips;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = manifest_path + ":" + std::to_string(lineno);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + ": " + e.what());
    }
    SourceClip clip;
    std::string path, lip_path;
    json speaker;
    try {
      StrictReader r(rec, where);
      r.required("path", path);
      r.required("kind", clip.kind);
      r.optional("speaker_id", speaker);
      r.optional("lip_path", lip_path);
      r.finish();
    } catch (const ConfigError& e) {
      throw DataError(std::string("schema error: ") + e.what());
    } catch (const json::exception& e) {
      throw DataError("schema error: " + where + ": " + e.what());
    }
    if (speaker.is_string())
      clip.speaker_id = speaker.get<std::string>();
    else if (speaker.is_number_integer())
      clip.speaker_id = std::to_string(speaker.get<std::int64_t>());
    else if (!speaker.is_null())
      throw DataError("schema error: " + where + ": speaker_id must be a string or integer");
    if (clip.kind != SourceKind::noise && !clip.speaker_id)
      throw DataError("schema error: " + where + ": speech entries need speaker_id");
    if (clip.kind == SourceKind::on_screen && lip_path.empty())
      throw DataError("schema error: " + where + ": on_screen entry lacks lip_path");
    clip.clip_id = path;
    clip.wave = resample(read_wav(resolve(path)), sample_rate);
    if (!lip_path.empty()) clip.lips = read_lip_features(resolve(lip_path));
    clips.push_back(std::move(clip));
  }
  return clips;
}

// Clips from a manifest, split by a stable hash of speaker id (or path for
// noise): one fifth of speakers form the test split.
class CorpusBank : public SourceBank {
 public:
  CorpusBank(const std::vector<SourceClip>& all, Split split) {
    for (const auto& c : all) {
      const std::string key = c.speaker_id.value_or(c.clip_id);
      const bool is_test = fnv(key) % 5 == 0;
      if (is_test != (split == Split::test)) continue;
      switch (c.kind) {
        case SourceKind::on_screen: on_.push_back(c); break;
        case SourceKind::off_screen: off_.push_back(c); break;
        case SourceKind::noise: noise_.push_back(c); break;
      }
    }
    if (on_.empty() || off_.empty())
      throw DataError("corpus split " + split_name(split) +
                      " needs on_screen and off_screen clips");
  }

  SourceClip on_screen(Rng& rng, double) const override { return pick(on_, rng); }
  SourceClip off_screen(Rng& rng, double) const override { return pick(off_, rng); }
  SourceClip enrollment_for(const SourceClip& off, Rng& rng, double) const override {
    std::vector<const SourceClip*> cands;
    for (const auto& c : off_)
      if (c.speaker_id == off.speaker_id && c.clip_id != off.clip_id) cands.push_back(&c);
    if (cands.empty())
      throw DataError("speaker " + *off.speaker_id + " has a single utterance; enrollment needs two");
    return *cands[rng() % cands.size()];
  }
  SourceClip noise(Rng& rng, double) const override {
    if (noise_.empty()) throw DataError("corpus has no noise clips");
    return pick(noise_, rng);
  }
  SourceClip interfering_speech(Rng& rng, double,
                                const std::vector<std::string>& exclude) const override {
    for (int tries = 0; tries < 1000; ++tries) {
      const auto& pool = rng() % 2 == 0 ? on_ : off_;
      SourceClip c = pick(pool, rng);
      if (std::find(exclude.begin(), exclude.end(), *c.speaker_id) == exclude.end()) {
        c.kind = SourceKind::off_screen;
        c.lips = {};
        return c;
      }
    }
    throw DataError("no interfering speaker distinct from the targets");
  }
  std::vector<std::string> speakers() const override {
    std::vector<std::string> out;
    for (const auto* pool : {&on_, &off_})
      for (const auto& c : *pool) out.push_back(*c.speaker_id);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

 private:
  static std::uint64_t fnv(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    return mix64(h);
  }
  static SourceClip pick(const std::vector<SourceClip>& v, Rng& rng) { return v[rng() % v.size()]; }

  std::vector<SourceClip> on_, off_, noise_;
};

inline std::uint64_t split_tag(Split s) { return static_cast<std::uint64_t>(s) + 1; }

// Sample `index` of a split; a pure function of (bank, spec, split, index).
inline MixtureSample generate_sample(const SourceBank& bank, const MixSpec& spec, Split split,
                                     std::size_t index) {
  Rng rng = derive_rng(spec.seed, split_tag(split), index);
  const double w = spec.window_s;
  const auto& range =
      split == Split::test ? spec.test_off_duration_range_s : spec.off_duration_range_s;
  SourceClip on = bank.on_screen(rng, w);
  SourceClip off = bank.off_screen(rng, std::max(w, range[1]));
  SourceClip enroll = bank.enrollment_for(off, rng, w);
  std::vector<std::string> exclude{on.speaker_id.value_or(""), off.speaker_id.value_or("")};
  std::vector<SourceClip> interferers;
  const auto mode = spec.interference_mode;
  if (mode == InterferenceMode::noise || mode == InterferenceMode::noise_spk)
    interferers.push_back(bank.noise(rng, w));
  const int speech = mode == InterferenceMode::two_spk ? 2
                     : (mode == InterferenceMode::spk || mode == InterferenceMode::noise_spk) ? 1
                                                                                              : 0;
  for (int i = 0; i < speech; ++i) {
    interferers.push_back(bank.interfering_speech(rng, w, exclude));
    exclude.push_back(interferers.back().speaker_id.value_or(""));
  }
  MixtureSample s = make_sample(on, off, interferers, enroll, spec, rng, range);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%05zu", split_name(split).c_str(), index);
  s.meta.id = buf;
  return s;
}

inline std::vector<MixtureSample> generate_split(const SourceBank& bank, const MixSpec& spec,
                                                 Split split, std::size_t count) {
  std::vector<MixtureSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_sample(bank, spec, split, i));
  return out;
}

// ---------------------------------------------------------------------------
// On-disk datasets: <dir>/<id>.{mix,target,on,off,interf,enroll}.wav,
// <dir>/<id>.lip.f32 (+ .json sidecar) and <dir>/index.json.

inline constexpr int kDatasetFormatVersion = 1;

inline void write_dataset(const std::string& dir, const std::vector<MixtureSample>& samples,
                          const MixSpec& spec, Split split) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json index;
  index["format_version"] = kDatasetFormatVersion;
  index["split"] = split_name(split);
  index["spec"] = spec;
  json list = json::array();
  for (const auto& s : samples) {
    const std::string stem = (fs::path(dir) / s.meta.id).string();
    write_wav(stem + ".mix.wav", s.mix);
    write_wav(stem + ".target.wav", s.target);
    write_wav(stem + ".on.wav", s.on_screen);
    write_wav(stem + ".off.wav", s.off_screen);
    write_wav(stem + ".interf.wav", s.interference);
    write_wav(stem + ".enroll.wav", s.enrollment);
    write_lip_features(stem + ".lip.f32", s.lips);
    list.push_back(meta_to_json(s.meta, spec.sample_rate));
  }
  index["samples"] = std::move(list);
  write_json_file((fs::path(dir) / "index.json").string(), index);
}

struct Dataset {
  MixSpec spec;
  Split split = Split::train;
  std::vector<MixtureSample> samples;
};

inline Dataset read_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const json index = read_json_file((fs::path(dir) / "index.json").string());
  Dataset d;
  try {
    if (index.at("format_version").get<int>() != kDatasetFormatVersion)
      throw DataError(dir + ": unsupported dataset format version");
    d.spec = mix_spec_from_json(index.at("spec"));
    const std::string split = index.at("split").get<std::string>();
    d.split = split == "train" ? Split::train : split == "val" ? Split::val : Split::test;
    for (const auto& m : index.at("samples")) {
      MixtureSample s;
      s.meta.id = m.at("id").get<std::string>();
      s.meta.mode = m.at("interference_mode").get<InterferenceMode>();
      if (!m.at("snr_off_db").is_null()) s.meta.snr_off_db = m.at("snr_off_db").get<double>();
      s.meta.snr_interferers_db = m.at("snr_interferers_db").get<std::vector<double>>();
      s.meta.interferer_ids = m.at("interferer_ids").get<std::vector<std::string>>();
      s.meta.interferer_kinds = m.at("interferer_kinds").get<std::vector<SourceKind>>();
      const auto iv = m.at("off_interval_samples").get<std::array<std::size_t, 2>>();
      s.meta.off_interval = {iv[0], iv[1]};
      s.meta.mute = m.at("mute").get<MuteFlag>();
      s.meta.on_id = m.at("on_id").get<std::string>();
      s.meta.off_id = m.at("off_id").get<std::string>();
      s.meta.enrollment_id = m.at("enrollment_id").get<std::string>();
      s.meta.on_speaker = m.at("on_speaker").get<std::string>();
      s.meta.off_speaker = m.at("off_speaker").get<std::string>();
      s.meta.scale = m.at("scale").get<double>();
      const std::string stem = (fs::path(dir) / s.meta.id).string();
      s.mix = read_wav(stem + ".mix.wav");
      s.target = read_wav(stem + ".target.wav");
      s.on_screen = read_wav(stem + ".on.wav");
      s.off_screen = read_wav(stem + ".off.wav");
      s.interference = read_wav(stem + ".interf.wav");
      s.enrollment = read_wav(stem + ".enroll.wav");
      s.lips = read_lip_features(stem + ".lip.f32");
      s.oracle_vad = oracle_vad(s.meta.off_interval, d.spec.num_frames(), d.spec.frame_window,
                                d.spec.frame_hop);
      d.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw DataError(dir + "/index.json: " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(dir + "/index.json: " + e.what());
  }
  return d;
}

}  // namespace avse
