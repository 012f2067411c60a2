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


// Mixing-based baseline: a visual-only and a voiceprint-only extractor,
// trained separately on their own targets, whose outputs are summed.

#pragma once

#include <span>
#include <vector>

#include "avse/model.hpp"
#include "avse/training.hpp"

namespace avse {

// Same backbone as the proposed model; the extractor sees a single clue and
// has no attention head.
inline ModelConfig single_clue_config(ClueMode kind, ModelConfig cfg) {
  require(kind != ClueMode::both, "single-clue model needs visual or voiceprint");
  cfg.clue = kind;
  cfg.use_attention = false;
  cfg.validate();
  return cfg;
}

inline Model<float> build_single_clue_model(ClueMode kind, const ModelConfig& cfg,
                                            std::uint64_t seed) {
  return Model<float>(single_clue_config(kind, cfg), seed);
}

// Training setup for one half of the baseline: the visual model learns the
// on-screen speech, the voiceprint model the off-screen speech. Muting does
// not apply.
inline TrainConfig single_clue_train_config(ClueMode kind, TrainConfig cfg) {
  require(kind != ClueMode::both, "single-clue model needs visual or voiceprint");
  cfg.target = kind == ClueMode::visual ? TargetKind::on_screen : TargetKind::off_screen;
  cfg.muting = false;
  return cfg;
}

template <class T>
std::vector<T> mix_outputs(std::span<const T> est_on, std::span<const T> est_off) {
  require(est_on.size() == est_off.size(), "baseline estimates differ in length");
  std::vector<T> out(est_on.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = est_on[i] + est_off[i];
  return out;
}

inline Waveform mix_outputs(const Waveform& est_on, const Waveform& est_off) {
  require(est_on.sample_rate == est_off.sample_rate, "baseline estimates differ in rate");
  return Waveform(mix_outputs(est_on.view(), est_off.view()), est_on.sample_rate);
}

inline Estimator baseline_estimator(const ModelParams<float>& visual,
                                    const ModelParams<float>& voiceprint) {
  require(visual.config.clue == ClueMode::visual, "first baseline model must be visual");
  require(voiceprint.config.clue == ClueMode::voiceprint,
          "second baseline model must be voiceprint");
  return [&visual, &voiceprint](const MixtureSample& s) {
    const auto on = forward(visual, model_input(s)).estimate;
    const auto off = forward(voiceprint, model_input(s)).estimate;
    return Estimate{mix_outputs<float>(on, off), {}};
  };
}

// Scored against the on+off mixture, like the proposed model.
inline EvalReport evaluate_baseline(const Model<float>& visual, const Model<float>& voiceprint,
                                    const Dataset& data) {
  check_compatible(visual.config(), data.spec);
  check_compatible(voiceprint.config(), data.spec);
  EvalReport r = evaluate_estimates(data, baseline_estimator(visual.params(), voiceprint.params()));
  r.label = "baseline";
  r.extra["parameters"] = {{"visual", visual.count_parameters()},
                           {"voiceprint", voiceprint.count_parameters()},
                           {"total", visual.count_parameters().total +
                                         voiceprint.count_parameters().total}};
  return r;
}

}  // namespace avse
