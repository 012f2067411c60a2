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


// Run configuration shared by the command-line subcommands.

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "avse/mixsim.hpp"
#include "avse/model.hpp"
#include "avse/training.hpp"

namespace avse {

struct SplitSizes {
  int train = 512;
  int val = 64;
  int test = 64;

  static SplitSizes full_scale() { return {20000, 5000, 3000}; }
};

struct RunConfig {
  ModelConfig model;
  MixSpec mix;
  TrainConfig train;
  std::string data_dir = "data";
  std::string run_dir = "run";
  InterferenceMode condition = InterferenceMode::noise;
  SplitSizes splits;
  std::optional<std::string> corpus_manifest;
};

inline json to_json_value(const RunConfig& c) {
  json j{{"model", c.model},
         {"mix", c.mix},
         {"train", c.train},
         {"data_dir", c.data_dir},
         {"run_dir", c.run_dir},
         {"condition", c.condition},
         {"splits", {{"train", c.splits.train}, {"val", c.splits.val}, {"test", c.splits.test}}}};
  if (c.corpus_manifest) j["corpus_manifest"] = *c.corpus_manifest;
  return j;
}

// The mix frame layout always follows the model; an explicit mix value that
// disagrees is rejected.
inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  StrictReader r(j, "config");
  if (const json* m = r.child("model")) c.model = model_config_from_json(*m);
  const json* mix = r.child("mix");
  if (const json* t = r.child("train")) c.train = train_config_from_json(*t);
  r.optional("data_dir", c.data_dir);
  r.optional("run_dir", c.run_dir);
  const bool has_condition = j.contains("condition");
  r.optional("condition", c.condition);
  if (const json* s = r.child("splits")) {
    StrictReader sr(*s, "splits");
    sr.optional("train", c.splits.train);
    sr.optional("val", c.splits.val);
    sr.optional("test", c.splits.test);
    sr.finish();
    if (c.splits.train < 1 || c.splits.val < 1 || c.splits.test < 1)
      throw ConfigError("splits: every split needs at least one sample");
  }
  std::string manifest;
  r.optional("corpus_manifest", manifest);
  if (!manifest.empty()) c.corpus_manifest = manifest;
  r.finish();

  MixSpec defaults;
  defaults.frame_window = c.model.window_len;
  defaults.frame_hop = c.model.hop;
  defaults.sample_rate = c.model.sample_rate;
  defaults.video_fps = c.model.video_fps;
  defaults.lip_dim = c.model.lip_dim;
  c.mix = mix ? mix_spec_from_json(*mix, defaults) : defaults;
  c.mix.validate();
  if (mix && mix->contains("interference_mode") && has_condition &&
      c.mix.interference_mode != c.condition)
    throw ConfigError("condition and mix.interference_mode disagree");
  if (has_condition) c.mix.interference_mode = c.condition;
  c.condition = c.mix.interference_mode;
  check_compatible(c.model, c.mix);
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  const json j = read_json_file(path);
  return run_config_from_json(j);
}

}  // namespace avse
