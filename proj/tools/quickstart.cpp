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


// Library walkthrough: synthesise a few mixtures, train a small model for a
// few seconds and score it against the unprocessed mixture.

#include <cstdio>

#include "avse/training.hpp"

int main() {
  using namespace avse;
  ModelConfig model = ModelConfig::tiny();
  MixSpec spec;
  spec.window_s = 0.4;
  spec.off_duration_range_s = {0.1, 0.4};
  spec.test_off_duration_range_s = {0.0, 0.4};
  spec.frame_window = model.window_len;
  spec.frame_hop = model.hop;
  spec.lip_dim = model.lip_dim;

  SyntheticBank train_bank(Split::train, spec.lip_dim), test_bank(Split::test, spec.lip_dim);
  Dataset train{spec, Split::train, generate_split(train_bank, spec, Split::train, 16)};
  Dataset test{spec, Split::test, generate_split(test_bank, spec, Split::test, 8)};

  TrainConfig cfg;
  cfg.epochs_max = 60;
  cfg.lr0 = 3e-3;
  cfg.batch_size = 4;
  FitOptions opts;
  opts.on_epoch = [](const EpochRecord& r) {
    std::printf("epoch %d  train loss %.3f  val SI-SDRi %.2f dB\n", r.epoch, r.train_loss,
                r.val_si_sdri);
  };
  const FitResult fit_result = fit(model, cfg, train, test, opts);

  const EvalReport rep = evaluate(Model<float>(fit_result.best), test);
  std::printf("test: SI-SDRi %.2f dB, SDRi %.2f dB, attention accuracy %.3f, %zu parameters\n",
              rep.si_sdri, rep.sdri, rep.attention_accuracy.value_or(0.0),
              rep.extra["parameters"]["total"].get<std::size_t>());
}
