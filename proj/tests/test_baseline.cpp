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


#include <gtest/gtest.h>

#include "avse/baseline.hpp"
#include "test_support.hpp"

namespace avse {
namespace {

using testing::synth_dataset;
using testing::tiny_model;
using testing::tiny_spec;

TEST(SingleClue, ConfigsDropTheOtherClue) {
  const ModelConfig v = single_clue_config(ClueMode::visual, tiny_model());
  EXPECT_EQ(v.clue, ClueMode::visual);
  EXPECT_FALSE(v.has_attention());
  EXPECT_THROW(single_clue_config(ClueMode::both, tiny_model()), ContractError);

  const Model<float> vis = build_single_clue_model(ClueMode::visual, tiny_model(), 1);
  const Model<float> voi = build_single_clue_model(ClueMode::voiceprint, tiny_model(), 1);
  for (const auto& t : vis.params().tensors()) {
    EXPECT_EQ(t.name.find("voiceprint"), std::string::npos) << t.name;
    EXPECT_EQ(t.name.find("voice_"), std::string::npos) << t.name;
    EXPECT_EQ(t.name.find("sdvad"), std::string::npos) << t.name;
  }
  for (const auto& t : voi.params().tensors()) {
    EXPECT_EQ(t.name.find("visual"), std::string::npos) << t.name;
    EXPECT_EQ(t.name.find("sdvad"), std::string::npos) << t.name;
  }
}

// The visual model must not react to the enrollment, the voiceprint model
// must not react to the lips.
TEST(SingleClue, OutputsIgnoreTheOtherClue) {
  const Dataset d = synth_dataset(tiny_spec(), Split::test, 2);
  const Model<float> vis = build_single_clue_model(ClueMode::visual, tiny_model(), 2);
  const Model<float> voi = build_single_clue_model(ClueMode::voiceprint, tiny_model(), 2);
  ModelInput a = model_input(d.samples[0]);
  ModelInput b = a;
  b.enrollment = d.samples[1].enrollment.view();
  EXPECT_EQ(vis.forward(a).estimate, vis.forward(b).estimate);
  EXPECT_NE(voi.forward(a).estimate, voi.forward(b).estimate);
  ModelInput c = a;
  c.lips = &d.samples[1].lips;
  EXPECT_EQ(voi.forward(a).estimate, voi.forward(c).estimate);
  EXPECT_NE(vis.forward(a).estimate, vis.forward(c).estimate);
  ModelInput no_lips = a;
  no_lips.lips = nullptr;
  EXPECT_NO_THROW(voi.forward(no_lips));
  EXPECT_THROW(vis.forward(no_lips), ContractError);
}

TEST(SingleClue, TrainConfigTargets) {
  const TrainConfig base;
  const TrainConfig v = single_clue_train_config(ClueMode::visual, base);
  const TrainConfig a = single_clue_train_config(ClueMode::voiceprint, base);
  EXPECT_EQ(v.target, TargetKind::on_screen);
  EXPECT_EQ(a.target, TargetKind::off_screen);
  EXPECT_FALSE(v.muting);
  EXPECT_FALSE(a.muting);
  EXPECT_EQ(v.lr0, base.lr0);
}

TEST(MixOutputs, SumsSampleWise) {
  const std::vector<float> on{1.0f, -2.0f, 0.5f}, off{0.25f, 2.0f, 0.0f};
  EXPECT_EQ(mix_outputs<float>(on, off), (std::vector<float>{1.25f, 0.0f, 0.5f}));
  EXPECT_THROW(mix_outputs<float>(on, std::vector<float>{1.0f}), ContractError);
  const Waveform w = mix_outputs(Waveform(on), Waveform(off));
  EXPECT_EQ(w.samples, (std::vector<float>{1.25f, 0.0f, 0.5f}));
  EXPECT_THROW(mix_outputs(Waveform(on), Waveform(off, 8000)), ContractError);
}

TEST(Baseline, EstimateIsSumOfSingleClueOutputs) {
  const Dataset d = synth_dataset(tiny_spec(), Split::test, 3);
  const Model<float> vis = build_single_clue_model(ClueMode::visual, tiny_model(), 3);
  const Model<float> voi = build_single_clue_model(ClueMode::voiceprint, tiny_model(), 4);
  const Estimator est = baseline_estimator(vis.params(), voi.params());
  for (const auto& s : d.samples) {
    const auto on = vis.forward(model_input(s)).estimate;
    const auto off = voi.forward(model_input(s)).estimate;
    const Estimate e = est(s);
    ASSERT_EQ(e.estimate.size(), on.size());
    for (std::size_t i = 0; i < on.size(); ++i) EXPECT_EQ(e.estimate[i], on[i] + off[i]);
    EXPECT_TRUE(e.attentions.empty());
  }
  EXPECT_THROW(baseline_estimator(voi.params(), vis.params()), ContractError);
}

TEST(Baseline, ReportCountsBothModels) {
  const Dataset d = synth_dataset(tiny_spec(), Split::test, 2);
  const Model<float> vis = build_single_clue_model(ClueMode::visual, tiny_model(), 3);
  const Model<float> voi = build_single_clue_model(ClueMode::voiceprint, tiny_model(), 4);
  const EvalReport r = evaluate_baseline(vis, voi, d);
  EXPECT_EQ(r.label, "baseline");
  EXPECT_EQ(r.count, 2u);
  EXPECT_EQ(r.extra["parameters"]["total"].get<std::size_t>(),
            vis.count_parameters().total + voi.count_parameters().total);
}

TEST(Baseline, ProposedIsSmallerThanTwoSingleClueModels) {
  for (const ModelConfig& cfg : {tiny_model(), ModelConfig::desk(), ModelConfig::large()}) {
    const std::size_t proposed = Model<float>(cfg, 1).count_parameters().total;
    const std::size_t vis = build_single_clue_model(ClueMode::visual, cfg, 1).count_parameters().total;
    const std::size_t voi =
        build_single_clue_model(ClueMode::voiceprint, cfg, 1).count_parameters().total;
    EXPECT_LT(proposed, vis + voi);
    EXPECT_GT(proposed, std::max(vis, voi));
  }
}

}  // namespace
}  // namespace avse
