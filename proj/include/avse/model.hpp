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

// Single-path audio-visual extractor. The noisy mixture is encoded by a
// strided learnable filterbank; lip features and an enrollment utterance are
// encoded into a time-variant visual clue and a time-invariant voiceprint.
// R extractor blocks fuse both clues with the running latent and refine it
// with a dilated TCN stack; the last latent becomes a sigmoid mask on the
// encoded mixture, which is decoded by overlap-add.
//
// The scalar type is a template parameter: training runs in float, gradient
// checks in double.

#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avse/core.hpp"
#include "avse/json_util.hpp"
#include "avse/layers.hpp"

namespace avse {

// Which clues condition the extractor. `visual` and `voiceprint` are the
// single-clue variants used by the mixing baseline.
enum class ClueMode { both, visual, voiceprint };
enum class Upsampling { nearest, linear };

NLOHMANN_JSON_SERIALIZE_ENUM(ClueMode, {{ClueMode::both, "both"},
                                        {ClueMode::visual, "visual"},
                                        {ClueMode::voiceprint, "voiceprint"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Upsampling, {{Upsampling::nearest, "nearest"},
                                          {Upsampling::linear, "linear"}})

struct ModelConfig {
  int window_len = 32;
  int hop = 16;
  int d_in = 64;
  int d_v = 64;
  int d_a = 64;
  int d_av = 64;
  int num_blocks = 2;
  int tcn_layers_per_block = 4;
  int tcn_channels = 128;
  int tcn_kernel = 3;
  int lip_dim = 8;
  bool use_attention = true;
  double video_fps = 25.0;
  int sample_rate = kSampleRate;
  Upsampling upsampling = Upsampling::nearest;
  ClueMode clue = ClueMode::both;

  // Laptop-scale defaults.
  static ModelConfig desk() { return ModelConfig{}; }

  // Full-size extractor (D^av = D^in = 256, R = 4)
  // around an AV-ConvTasNet style backbone. Lip inputs are 512-d front-end
  // embeddings.
  static ModelConfig large() {
    ModelConfig c;
    c.window_len = 40;
    c.hop = 20;
    c.d_in = 256;
    c.d_v = 512;
    c.d_a = 256;
    c.d_av = 256;
    c.num_blocks = 4;
    c.tcn_layers_per_block = 8;
    c.tcn_channels = 512;
    c.lip_dim = 512;
    return c;
  }

  // Gradient-check scale.
  static ModelConfig tiny() {
    ModelConfig c;
    c.window_len = 16;
    c.hop = 8;
    c.d_in = 8;
    c.d_v = 6;
    c.d_a = 5;
    c.d_av = 8;
    c.num_blocks = 1;
    c.tcn_layers_per_block = 2;
    c.tcn_channels = 12;
    c.lip_dim = 4;
    return c;
  }

  bool uses_visual() const { return clue != ClueMode::voiceprint; }
  bool uses_voiceprint() const { return clue != ClueMode::visual; }
  bool has_attention() const { return use_attention && clue == ClueMode::both; }

  void validate() const {
    auto pos = [](int v, const char* name) {
      if (v < 1) throw ConfigError(std::string("model.") + name + " must be >= 1");
    };
    pos(window_len, "window_len");
    pos(hop, "hop");
    pos(d_in, "d_in");
    pos(d_v, "d_v");
    pos(d_a, "d_a");
    pos(d_av, "d_av");
    pos(num_blocks, "num_blocks");
    pos(tcn_layers_per_block, "tcn_layers_per_block");
    pos(tcn_channels, "tcn_channels");
    pos(lip_dim, "lip_dim");
    if (hop > window_len) throw ConfigError("model.hop must be <= window_len");
    if (tcn_kernel < 1 || tcn_kernel % 2 == 0)
      throw ConfigError("model.tcn_kernel must be odd and >= 1");
    if (!(video_fps > 0)) throw ConfigError("model.video_fps must be > 0");
    if (sample_rate < 1) throw ConfigError("model.sample_rate must be >= 1");
  }

  // T = floor((N - L) / hop) + 1.
  int num_frames(std::size_t samples) const {
    return nn::frame_count(samples, window_len, hop);
  }
  double frame_rate() const { return static_cast<double>(sample_rate) / hop; }
};

inline void to_json(json& j, const ModelConfig& c) {
  j = json{{"window_len", c.window_len},
           {"hop", c.hop},
           {"d_in", c.d_in},
           {"d_v", c.d_v},
           {"d_a", c.d_a},
           {"d_av", c.d_av},
           {"num_blocks", c.num_blocks},
           {"tcn_layers_per_block", c.tcn_layers_per_block},
           {"tcn_channels", c.tcn_channels},
           {"tcn_kernel", c.tcn_kernel},
           {"lip_dim", c.lip_dim},
           {"use_attention", c.use_attention},
           {"video_fps", c.video_fps},
           {"sample_rate", c.sample_rate},
           {"upsampling", c.upsampling},
           {"clue", c.clue}};
}

inline ModelConfig model_config_from_json(const json& j,
                                          ModelConfig base = {}) {
  StrictReader r(j, "model");
  std::string preset;
  r.optional("preset", preset);
  if (preset == "large")
    base = ModelConfig::large();
  else if (preset == "tiny")
    base = ModelConfig::tiny();
  else if (!preset.empty() && preset != "desk")
    throw ConfigError("model.preset must be desk, large or tiny");
  r.optional("window_len", base.window_len);
  r.optional("hop", base.hop);
  r.optional("d_in", base.d_in);
  r.optional("d_v", base.d_v);
  r.optional("d_a", base.d_a);
  r.optional("d_av", base.d_av);
  r.optional("num_blocks", base.num_blocks);
  r.optional("tcn_layers_per_block", base.tcn_layers_per_block);
  r.optional("tcn_channels", base.tcn_channels);
  r.optional("tcn_kernel", base.tcn_kernel);
  r.optional("lip_dim", base.lip_dim);
  r.optional("use_attention", base.use_attention);
  r.optional("video_fps", base.video_fps);
  r.optional("sample_rate", base.sample_rate);
  r.optional("upsampling", base.upsampling);
  r.optional("clue", base.clue);
  r.finish();
  base.validate();
  return base;
}

template <class T>
struct TcnLayer {
  nn::Pointwise<T> in;
  nn::PRelu<T> act1;
  nn::GlobalNorm<T> norm1;
  nn::Depthwise<T> dconv;
  nn::PRelu<T> act2;
  nn::GlobalNorm<T> norm2;
  nn::Pointwise<T> out;

  void collect(const std::string& p, nn::TensorList<T>& list) {
    in.collect(p + ".in", list);
    act1.collect(p + ".act1", list);
    norm1.collect(p + ".norm1", list);
    dconv.collect(p + ".dconv", list);
    act2.collect(p + ".act2", list);
    norm2.collect(p + ".norm2", list);
    out.collect(p + ".out", list);
  }
};

template <class T>
struct ExtractorBlock {
  nn::Pointwise<T> visual_proj;  // z^v -> z^v_r
  nn::GlobalNorm<T> visual_norm;
  nn::Pointwise<T> voice_proj;  // z^a -> z^a_r
  nn::GlobalNorm<T> voice_norm;
  std::vector<TcnLayer<T>> tcn;
};

// Speaker-dependent activity head, shared by all blocks:
// a(t) = sigmoid(w . (z^a_r (*) (Q z^in_{r-1}(t) + q)) + b).
template <class T>
struct SdvadHead {
  nn::Pointwise<T> query;  // d_in -> d_av
  nn::Pointwise<T> score;  // d_av -> 1
};

template <class T>
struct ModelParams {
  nn::Pointwise<T> audio_encoder;  // window -> d_in, no bias
  nn::TemporalConv<T> visual_conv;
  nn::Pointwise<T> visual_out;
  nn::Pointwise<T> voice_frame;  // window -> d_a
  nn::Pointwise<T> voice_hidden;
  std::vector<ExtractorBlock<T>> blocks;
  SdvadHead<T> sdvad;
  nn::Pointwise<T> decoder;  // d_in -> window, no bias
  ModelConfig config;

  nn::TensorList<T> tensors() {
    nn::TensorList<T> list;
    audio_encoder.collect("audio_encoder.filters", list);
    if (config.uses_visual()) {
      visual_conv.collect("visual_encoder.conv", list);
      visual_out.collect("visual_encoder.out", list);
    }
    if (config.uses_voiceprint()) {
      voice_frame.collect("voiceprint_encoder.frame", list);
      voice_hidden.collect("voiceprint_encoder.hidden", list);
    }
    for (std::size_t r = 0; r < blocks.size(); ++r) {
      const std::string p = "extractor.block" + std::to_string(r);
      auto& b = blocks[r];
      if (config.uses_visual()) {
        b.visual_proj.collect(p + ".visual_proj", list);
        b.visual_norm.collect(p + ".visual_norm", list);
      }
      if (config.uses_voiceprint()) {
        b.voice_proj.collect(p + ".voice_proj", list);
        b.voice_norm.collect(p + ".voice_norm", list);
      }
      for (std::size_t i = 0; i < b.tcn.size(); ++i)
        b.tcn[i].collect(p + ".tcn" + std::to_string(i), list);
    }
    if (config.has_attention()) {
      sdvad.query.collect("sdvad.query", list);
      sdvad.score.collect("sdvad.score", list);
    }
    decoder.collect("audio_decoder.filters", list);
    return list;
  }

  nn::TensorList<T> tensors() const {
    return const_cast<ModelParams*>(this)->tensors();
  }

  ModelParams zeros_like() const {
    ModelParams z = *this;
    for (auto& t : z.tensors()) t.value->setZero();
    return z;
  }

};

// Deterministic initialisation: identical seeds give identical values for
// any scalar type (up to rounding).
template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = derive_rng(seed, 0x6d6f64656cULL);
  ModelParams<T> p;
  p.config = cfg;
  p.audio_encoder.init(cfg.window_len, cfg.d_in, false, rng);
  if (cfg.uses_visual()) {
    p.visual_conv.init(cfg.lip_dim, cfg.d_v, 3, rng);
    p.visual_out.init(cfg.d_v, cfg.d_v, true, rng);
  }
  if (cfg.uses_voiceprint()) {
    p.voice_frame.init(cfg.window_len, cfg.d_a, true, rng);
    p.voice_hidden.init(cfg.d_a, cfg.d_a, true, rng);
  }
  p.blocks.resize(cfg.num_blocks);
  for (auto& b : p.blocks) {
    if (cfg.uses_visual()) {
      b.visual_proj.init(cfg.d_v, cfg.d_av, true, rng);
      b.visual_norm.init(cfg.d_av);
    }
    if (cfg.uses_voiceprint()) {
      b.voice_proj.init(cfg.d_a, cfg.d_av, true, rng);
      b.voice_norm.init(cfg.d_av);
    }
    b.tcn.resize(cfg.tcn_layers_per_block);
    for (int i = 0; i < cfg.tcn_layers_per_block; ++i) {
      auto& l = b.tcn[i];
      const int in = i == 0 ? cfg.d_in + cfg.d_av : cfg.d_in;
      l.in.init(in, cfg.tcn_channels, true, rng);
      l.act1.init();
      l.norm1.init(cfg.tcn_channels);
      l.dconv.init(cfg.tcn_channels, cfg.tcn_kernel, 1 << i, rng);
      l.act2.init();
      l.norm2.init(cfg.tcn_channels);
      l.out.init(cfg.tcn_channels, cfg.d_in, true, rng);
    }
  }
  if (cfg.has_attention()) {
    p.sdvad.query.init(cfg.d_in, cfg.d_av, true, rng);
    p.sdvad.score.init(cfg.d_av, 1, true, rng);
  }
  p.decoder.init(cfg.d_in, cfg.window_len, false, rng);
  return p;
}

// Same parameters in another scalar type.
template <class U, class T>
ModelParams<U> cast_params(const ModelParams<T>& src) {
  ModelParams<U> out = init_params<U>(src.config, 0);
  auto from = src.tensors();
  auto to = out.tensors();
  for (std::size_t i = 0; i < from.size(); ++i)
    *to[i].value = from[i].value->template cast<U>();
  return out;
}

struct ParameterCount {
  std::size_t total = 0;
  std::map<std::string, std::size_t> per_component;
};

template <class T>
ParameterCount count_parameters(const ModelParams<T>& params) {
  ParameterCount c;
  for (const auto& t : params.tensors()) {
    const auto n = static_cast<std::size_t>(t.value->size());
    c.total += n;
    c.per_component[t.name.substr(0, t.name.find('.'))] += n;
  }
  return c;
}

inline void to_json(json& j, const ParameterCount& c) {
  j = json{{"total", c.total}, {"per_component", c.per_component}};
}

// ---------------------------------------------------------------------------
// Forward pass.

template <class T>
struct TcnTrace {
  Mat<T> input;
  Mat<T> pre1;
  nn::NormCache<T> n1;
  Mat<T> norm1_out;
  Mat<T> pre2;
  nn::NormCache<T> n2;
  Mat<T> norm2_out;
};

template <class T>
struct BlockTrace {
  Mat<T> input;
  nn::NormCache<T> visual_norm;
  Mat<T> voice_proj;  // z^a_r, d_av x 1
  nn::NormCache<T> voice_norm;
  Mat<T> voice_normed;  // z~^a_r
  Mat<T> query;
  Mat<T> product;
  RowVec<T> attention;
  std::vector<TcnTrace<T>> tcn;
};

template <class T>
struct VisualTrace {
  Mat<T> stacked;
  Mat<T> hidden;  // post-ReLU, d_v x video frames
  std::vector<int> src0, src1;
  std::vector<T> weight1;
};

template <class T>
struct VoiceprintTrace {
  Mat<T> frames;
  Mat<T> h1;
  Mat<T> h2;
  Mat<T> pooled;
  T norm = T(0);
};

template <class T>
struct ForwardTrace {
  std::size_t length = 0;
  Mat<T> frames;
  Mat<T> encoded;
  VisualTrace<T> visual_trace;
  Mat<T> visual;  // z^v, d_v x T
  VoiceprintTrace<T> voice_trace;
  Mat<T> voiceprint;  // z^a, d_a x 1
  std::vector<BlockTrace<T>> blocks;
  Mat<T> mask;
  Mat<T> masked;
};

enum class MaskOverride { none, ones, zeros };

struct ForwardOptions {
  MaskOverride mask = MaskOverride::none;
};

struct ModelInput {
  std::span<const float> mix;
  const LipFeatures* lips = nullptr;
  std::span<const float> enrollment;
};

template <class T>
struct ForwardResult {
  std::vector<T> estimate;
  std::vector<RowVec<T>> attentions;  // one per block when attention is on
};

template <class T, class S>
Latent<T> audio_encode(const ModelParams<T>& p, std::span<const S> mix,
                       ForwardTrace<T>* trace = nullptr) {
  const auto& cfg = p.config;
  require(mix.size() >= static_cast<std::size_t>(cfg.window_len),
          "mixture has " + std::to_string(mix.size()) +
              " samples, fewer than the encoder window " +
              std::to_string(cfg.window_len));
  Mat<T> frames = nn::frame_signal<T>(mix, cfg.window_len, cfg.hop);
  Mat<T> encoded = nn::relu(p.audio_encoder.forward(frames));
  if (trace) trace->frames = std::move(frames);
  return encoded;
}

// Source video frame(s) for each latent frame, by frame-centre time.
template <class T>
void upsampling_map(const ModelConfig& cfg, int video_frames,
                    int latent_frames, VisualTrace<T>& vt) {
  vt.src0.resize(latent_frames);
  vt.src1.resize(latent_frames);
  vt.weight1.assign(latent_frames, T(0));
  for (int t = 0; t < latent_frames; ++t) {
    const double centre =
        (static_cast<double>(t) * cfg.hop + 0.5 * cfg.window_len) /
        cfg.sample_rate;
    if (cfg.upsampling == Upsampling::nearest) {
      const int k = std::clamp(static_cast<int>(std::floor(centre * cfg.video_fps)),
                               0, video_frames - 1);
      vt.src0[t] = vt.src1[t] = k;
    } else {
      const double pos = centre * cfg.video_fps - 0.5;
      int k0 = static_cast<int>(std::floor(pos));
      double w = pos - k0;
      if (k0 < 0) {
        k0 = 0;
        w = 0.0;
      }
      if (k0 >= video_frames - 1) {
        k0 = video_frames - 1;
        w = 0.0;
      }
      vt.src0[t] = k0;
      vt.src1[t] = std::min(k0 + 1, video_frames - 1);
      vt.weight1[t] = static_cast<T>(w);
    }
  }
}

// Lip features (video rate) -> z^v at the latent frame rate.
template <class T>
Latent<T> visual_encode(const ModelParams<T>& p, const LipFeatures& lips,
                        std::size_t num_samples,
                        ForwardTrace<T>* trace = nullptr) {
  const auto& cfg = p.config;
  require(lips.frames >= 1, "lip feature sequence is empty");
  require(lips.dims == cfg.lip_dim,
          "lip feature width " + std::to_string(lips.dims) + " != " +
              std::to_string(cfg.lip_dim));
  require(std::abs(lips.fps - cfg.video_fps) < 1e-9,
          "lip features must be at the configured video rate");
  const double audio_s = static_cast<double>(num_samples) / cfg.sample_rate;
  require(std::abs(lips.duration_s() - audio_s) <= 1.0 / cfg.video_fps + 1e-9,
          "lip features span " + std::to_string(lips.duration_s()) +
              " s but audio spans " + std::to_string(audio_s) + " s");
  const int latent_frames = cfg.num_frames(num_samples);
  require(latent_frames >= 1, "audio shorter than the encoder window");

  Mat<T> raw(lips.dims, lips.frames);
  for (int f = 0; f < lips.frames; ++f)
    for (int d = 0; d < lips.dims; ++d) raw(d, f) = static_cast<T>(lips.at(f, d));

  VisualTrace<T> local;
  VisualTrace<T>& vt = trace ? trace->visual_trace : local;
  Mat<T> hidden = nn::relu(p.visual_conv.forward(raw, &vt.stacked));
  Mat<T> video = p.visual_out.forward(hidden);
  vt.hidden = std::move(hidden);
  upsampling_map(cfg, lips.frames, latent_frames, vt);

  Mat<T> out(video.rows(), latent_frames);
  for (int t = 0; t < latent_frames; ++t) {
    const T w = vt.weight1[t];
    if (w == T(0))
      out.col(t) = video.col(vt.src0[t]);
    else
      out.col(t) = (T(1) - w) * video.col(vt.src0[t]) + w * video.col(vt.src1[t]);
  }
  return out;
}

// Enrollment -> unit-norm speaker embedding. Frames do not overlap, so the
// mean pool of an utterance repeated end to end equals that of one copy when
// the length is a multiple of the window.
template <class T, class S>
Mat<T> voiceprint_encode(const ModelParams<T>& p, std::span<const S> enrollment,
                         ForwardTrace<T>* trace = nullptr) {
  const auto& cfg = p.config;
  require(enrollment.size() >= static_cast<std::size_t>(cfg.window_len),
          "enrollment has " + std::to_string(enrollment.size()) +
              " samples, fewer than the encoder window");
  VoiceprintTrace<T> local;
  VoiceprintTrace<T>& vt = trace ? trace->voice_trace : local;
  vt.frames = nn::frame_signal<T>(enrollment, cfg.window_len, cfg.window_len);
  vt.h1 = nn::relu(p.voice_frame.forward(vt.frames));
  vt.h2 = nn::relu(p.voice_hidden.forward(vt.h1));
  vt.pooled = vt.h2.rowwise().mean();
  vt.norm = std::sqrt(vt.pooled.squaredNorm() + T(1e-12));
  return vt.pooled / vt.norm;
}

// a_r(t) in [0,1] from the element-wise product of z^a_r and the projected
// previous latent.
template <class T>
RowVec<T> detect_offscreen_activity(const SdvadHead<T>& head,
                                    const Mat<T>& voice_r,
                                    const Latent<T>& z_prev,
                                    BlockTrace<T>* trace = nullptr) {
  require(voice_r.cols() == 1 && voice_r.rows() == head.query.out_dim(),
          "speaker embedding width " + std::to_string(voice_r.rows()) +
              " != detector width " + std::to_string(head.query.out_dim()));
  require(z_prev.rows() == head.query.in_dim(),
          "latent width " + std::to_string(z_prev.rows()) +
              " != detector input width " + std::to_string(head.query.in_dim()));
  Mat<T> query = head.query.forward(z_prev);
  Mat<T> product = query.array().colwise() * voice_r.col(0).array();
  Mat<T> score = head.score.forward(product);
  RowVec<T> a = score.row(0).unaryExpr([](T v) { return nn::sigmoid(v); });
  if (trace) {
    trace->query = std::move(query);
    trace->product = std::move(product);
  }
  return a;
}

// z^av(t) = z~^v(t) + a(t) z~^a; a == nullptr means a(t) = 1.
template <class T>
Latent<T> fuse_clues(const Latent<T>& visual_normed, const Mat<T>& voice_normed,
                     const RowVec<T>* attention) {
  require(voice_normed.cols() == 1 && voice_normed.rows() == visual_normed.rows(),
          "clue widths differ: visual " + std::to_string(visual_normed.rows()) +
              ", voiceprint " + std::to_string(voice_normed.rows()));
  if (attention) {
    require(attention->size() == visual_normed.cols(),
            "attention length does not match frame count");
    return visual_normed + voice_normed * *attention;
  }
  return visual_normed.colwise() + voice_normed.col(0);
}

template <class T>
Latent<T> run_tcn_stack(const std::vector<TcnLayer<T>>& layers,
                        const Latent<T>& z_prev, const Latent<T>& fused,
                        std::vector<TcnTrace<T>>* traces) {
  Mat<T> h = z_prev;
  if (traces) traces->resize(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    Mat<T> input;
    if (i == 0) {
      input.resize(h.rows() + fused.rows(), h.cols());
      input << h, fused;
    } else {
      input = h;
    }
    Mat<T> pre1 = l.in.forward(input);
    nn::NormCache<T> n1;
    Mat<T> norm1_out = l.norm1.forward(l.act1.forward(pre1), &n1);
    Mat<T> pre2 = l.dconv.forward(norm1_out);
    nn::NormCache<T> n2;
    Mat<T> norm2_out = l.norm2.forward(l.act2.forward(pre2), &n2);
    h += l.out.forward(norm2_out);
    if (traces) {
      auto& tr = (*traces)[i];
      tr.input = std::move(input);
      tr.pre1 = std::move(pre1);
      tr.n1 = std::move(n1);
      tr.norm1_out = std::move(norm1_out);
      tr.pre2 = std::move(pre2);
      tr.n2 = std::move(n2);
      tr.norm2_out = std::move(norm2_out);
    }
  }
  return h;
}

// One extractor block: clue projection and fusion, then the TCN stack over
// [z^in_{r-1}; z^av_r]. Returns z^in_r; writes a_r when attention is on.
template <class T>
Latent<T> extractor_block(const ModelParams<T>& p, int r, const Latent<T>& z_prev,
                          const Latent<T>& visual, const Mat<T>& voiceprint,
                          RowVec<T>* attention_out,
                          BlockTrace<T>* trace = nullptr) {
  const auto& cfg = p.config;
  require(r >= 0 && r < cfg.num_blocks, "block index out of range");
  require(z_prev.rows() == cfg.d_in, "block input width mismatch");
  const auto& b = p.blocks[r];
  const Eigen::Index frames = z_prev.cols();

  BlockTrace<T> local;
  BlockTrace<T>& tr = trace ? *trace : local;

  Mat<T> visual_normed;
  if (cfg.uses_visual()) {
    require(visual.cols() == frames, "visual clue frame count mismatch");
    visual_normed = b.visual_norm.forward(b.visual_proj.forward(visual),
                                          &tr.visual_norm);
  }
  Mat<T> voice_normed;
  if (cfg.uses_voiceprint()) {
    tr.voice_proj = b.voice_proj.forward(voiceprint);
    voice_normed = b.voice_norm.forward(tr.voice_proj, &tr.voice_norm);
  }

  Mat<T> fused;
  switch (cfg.clue) {
    case ClueMode::both:
      if (cfg.has_attention()) {
        tr.attention = detect_offscreen_activity(p.sdvad, tr.voice_proj, z_prev, &tr);
        fused = fuse_clues(visual_normed, voice_normed, &tr.attention);
        if (attention_out) *attention_out = tr.attention;
      } else {
        fused = fuse_clues<T>(visual_normed, voice_normed, nullptr);
      }
      break;
    case ClueMode::visual:
      fused = std::move(visual_normed);
      break;
    case ClueMode::voiceprint:
      fused = voice_normed.replicate(1, frames);
      break;
  }
  tr.voice_normed = std::move(voice_normed);
  tr.input = z_prev;
  return run_tcn_stack(b.tcn, z_prev, fused, trace ? &tr.tcn : nullptr);
}

template <class T>
ForwardResult<T> forward(const ModelParams<T>& p, const ModelInput& in,
                         ForwardTrace<T>* trace = nullptr,
                         const ForwardOptions& opts = {}) {
  const auto& cfg = p.config;
  ForwardTrace<T> local;
  ForwardTrace<T>& tr = trace ? *trace : local;
  tr.length = in.mix.size();
  tr.encoded = audio_encode(p, in.mix, &tr);
  const Eigen::Index frames = tr.encoded.cols();

  if (cfg.uses_visual()) {
    require(in.lips != nullptr, "visual clue required but no lip features given");
    tr.visual = visual_encode(p, *in.lips, in.mix.size(), &tr);
  }
  if (cfg.uses_voiceprint()) tr.voiceprint = voiceprint_encode(p, in.enrollment, &tr);

  ForwardResult<T> result;
  tr.blocks.resize(cfg.num_blocks);
  Mat<T> z = tr.encoded;
  for (int r = 0; r < cfg.num_blocks; ++r) {
    RowVec<T> a;
    z = extractor_block(p, r, z, tr.visual, tr.voiceprint,
                        cfg.has_attention() ? &a : nullptr, &tr.blocks[r]);
    if (cfg.has_attention()) result.attentions.push_back(std::move(a));
  }

  switch (opts.mask) {
    case MaskOverride::none:
      tr.mask = z.unaryExpr([](T v) { return nn::sigmoid(v); });
      break;
    case MaskOverride::ones:
      tr.mask = Mat<T>::Ones(cfg.d_in, frames);
      break;
    case MaskOverride::zeros:
      tr.mask = Mat<T>::Zero(cfg.d_in, frames);
      break;
  }
  tr.masked = tr.mask.cwiseProduct(tr.encoded);
  Mat<T> segments = p.decoder.forward(tr.masked);
  result.estimate = nn::overlap_add(segments, cfg.hop, in.mix.size());
  return result;
}

// ---------------------------------------------------------------------------
// Backward pass. Accumulates into `grad` (same structure as the parameters).

template <class T>
Mat<T> tcn_backward(const std::vector<TcnLayer<T>>& layers,
                    const std::vector<TcnTrace<T>>& traces, Mat<T> dh,
                    std::vector<TcnLayer<T>>& grad, int d_in, Mat<T>* dfused) {
  for (std::size_t ii = layers.size(); ii-- > 0;) {
    const auto& l = layers[ii];
    const auto& tr = traces[ii];
    auto& g = grad[ii];
    Mat<T> d = l.out.backward(tr.norm2_out, dh, g.out);
    d = l.norm2.backward(tr.n2, d, g.norm2);
    d = l.act2.backward(tr.pre2, d, g.act2);
    d = l.dconv.backward(tr.norm1_out, d, g.dconv);
    d = l.norm1.backward(tr.n1, d, g.norm1);
    d = l.act1.backward(tr.pre1, d, g.act1);
    d = l.in.backward(tr.input, d, g.in);
    if (ii == 0) {
      dh += d.topRows(d_in);
      *dfused = d.bottomRows(d.rows() - d_in);
    } else {
      dh += d;
    }
  }
  return dh;
}

template <class T>
void backward(const ModelParams<T>& p, const ForwardTrace<T>& tr,
              std::span<const T> d_estimate,
              const std::vector<RowVec<T>>& d_attention, ModelParams<T>& grad) {
  const auto& cfg = p.config;
  require(d_estimate.size() == tr.length, "estimate gradient has wrong length");
  const Eigen::Index frames = tr.encoded.cols();

  Mat<T> dseg = nn::overlap_add_backward(d_estimate, cfg.window_len, cfg.hop, frames);
  Mat<T> dmasked = p.decoder.backward(tr.masked, dseg, grad.decoder);
  Mat<T> dencoded = dmasked.cwiseProduct(tr.mask);
  Mat<T> dz = (dmasked.array() * tr.encoded.array() * tr.mask.array() *
               (T(1) - tr.mask.array()))
                  .matrix();

  Mat<T> dvisual;
  if (cfg.uses_visual()) dvisual = Mat<T>::Zero(tr.visual.rows(), frames);
  Mat<T> dvoice;
  if (cfg.uses_voiceprint()) dvoice = Mat<T>::Zero(tr.voiceprint.rows(), 1);

  for (int r = cfg.num_blocks - 1; r >= 0; --r) {
    const auto& b = p.blocks[r];
    const auto& bt = tr.blocks[r];
    auto& g = grad.blocks[r];
    Mat<T> dfused;
    dz = tcn_backward(b.tcn, bt.tcn, std::move(dz), g.tcn, cfg.d_in, &dfused);

    Mat<T> dvis_normed;
    Mat<T> dvoice_normed;
    RowVec<T> da;
    switch (cfg.clue) {
      case ClueMode::both:
        dvis_normed = dfused;
        if (cfg.has_attention()) {
          dvoice_normed = dfused * bt.attention.transpose();
          da = bt.voice_normed.transpose() * dfused;
          if (static_cast<int>(d_attention.size()) > r && d_attention[r].size() > 0)
            da += d_attention[r];
        } else {
          dvoice_normed = dfused.rowwise().sum();
        }
        break;
      case ClueMode::visual:
        dvis_normed = dfused;
        break;
      case ClueMode::voiceprint:
        dvoice_normed = dfused.rowwise().sum();
        break;
    }

    Mat<T> dvoice_r;
    if (cfg.uses_voiceprint())
      dvoice_r = b.voice_norm.backward(bt.voice_norm, dvoice_normed, g.voice_norm);

    if (cfg.has_attention()) {
      RowVec<T> ds = (da.array() * bt.attention.array() *
                      (T(1) - bt.attention.array()))
                         .matrix();
      Mat<T> dproduct = p.sdvad.score.backward(bt.product, ds, grad.sdvad.score);
      dvoice_r += (dproduct.array() * bt.query.array()).rowwise().sum().matrix();
      Mat<T> dquery = dproduct.array().colwise() * bt.voice_proj.col(0).array();
      dz += p.sdvad.query.backward(bt.input, dquery, grad.sdvad.query);
    }

    if (cfg.uses_visual()) {
      Mat<T> dv = b.visual_norm.backward(bt.visual_norm, dvis_normed, g.visual_norm);
      dvisual += b.visual_proj.backward(tr.visual, dv, g.visual_proj);
    }
    if (cfg.uses_voiceprint())
      dvoice += b.voice_proj.backward(tr.voiceprint, dvoice_r, g.voice_proj);
  }
  dencoded += dz;

  p.audio_encoder.backward(tr.frames, nn::relu_backward(tr.encoded, dencoded),
                           grad.audio_encoder);

  if (cfg.uses_visual()) {
    const auto& vt = tr.visual_trace;
    Mat<T> dvideo = Mat<T>::Zero(vt.hidden.rows(), vt.hidden.cols());
    for (Eigen::Index t = 0; t < frames; ++t) {
      const T w = vt.weight1[t];
      dvideo.col(vt.src0[t]) += (T(1) - w) * dvisual.col(t);
      if (w != T(0)) dvideo.col(vt.src1[t]) += w * dvisual.col(t);
    }
    Mat<T> dhidden = p.visual_out.backward(vt.hidden, dvideo, grad.visual_out);
    p.visual_conv.backward(vt.stacked, nn::relu_backward(vt.hidden, dhidden),
                           grad.visual_conv);
  }

  if (cfg.uses_voiceprint()) {
    const auto& vt = tr.voice_trace;
    const T n = vt.norm;
    Mat<T> dpooled = dvoice / n - vt.pooled * (vt.pooled.col(0).dot(dvoice.col(0)) /
                                               (n * n * n));
    Mat<T> dh2 = dpooled.replicate(1, vt.h2.cols()) / static_cast<T>(vt.h2.cols());
    Mat<T> dh1 = p.voice_hidden.backward(vt.h1, nn::relu_backward(vt.h2, dh2),
                                         grad.voice_hidden);
    p.voice_frame.backward(vt.frames, nn::relu_backward(vt.h1, dh1),
                           grad.voice_frame);
  }
}

// Owns configuration and parameters. Forward is const and may run
// concurrently; updates need exclusive access.
template <class T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed)
      : params_(init_params<T>(cfg, seed)) {}
  explicit Model(ModelParams<T> params) : params_(std::move(params)) {}

  const ModelConfig& config() const { return params_.config; }
  const ModelParams<T>& params() const { return params_; }
  ModelParams<T>& params() { return params_; }

  ForwardResult<T> forward(const ModelInput& in, ForwardTrace<T>* trace = nullptr,
                           const ForwardOptions& opts = {}) const {
    return avse::forward(params_, in, trace, opts);
  }

  ParameterCount count_parameters() const { return avse::count_parameters(params_); }

 private:
  ModelParams<T> params_;
};

}  // namespace avse
