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


#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "avse/metrics.hpp"
#include "avse/model.hpp"

namespace avse {
namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  std::vector<float> x(n);
  for (auto& v : x) v = static_cast<float>(scale * gaussian(rng));
  return x;
}

LipFeatures lips_for(const ModelConfig& cfg, std::size_t samples, std::uint64_t seed) {
  LipFeatures f;
  f.fps = cfg.video_fps;
  f.dims = cfg.lip_dim;
  f.frames = std::max(1, static_cast<int>(std::llround(samples * cfg.video_fps / cfg.sample_rate)));
  f.data = noise(static_cast<std::size_t>(f.frames) * f.dims, seed, 1.0);
  return f;
}

ModelConfig small() {
  ModelConfig c = ModelConfig::desk();
  c.d_in = 16;
  c.d_v = 12;
  c.d_a = 10;
  c.d_av = 14;
  c.tcn_channels = 20;
  c.tcn_layers_per_block = 3;
  return c;
}

TEST(AudioEncode, FrameCount) {
  const ModelConfig cfg = ModelConfig::desk();
  const auto p = init_params<float>(cfg, 1);
  EXPECT_EQ((audio_encode<float, float>(p, noise(64000, 1)).cols()), 3999);
  EXPECT_EQ((audio_encode<float, float>(p, noise(32, 1)).cols()), 1);
  EXPECT_EQ((audio_encode<float, float>(p, noise(32, 1)).rows()), cfg.d_in);
  EXPECT_THROW((audio_encode<float, float>(p, noise(31, 1))), ContractError);
  EXPECT_EQ(cfg.num_frames(64000), 3999);
}

TEST(VisualEncode, UpsamplesVideoRate) {
  const ModelConfig cfg = ModelConfig::desk();
  const auto p = init_params<float>(cfg, 2);
  const auto z = visual_encode<float>(p, lips_for(cfg, 64000, 3), 64000);
  EXPECT_EQ(z.rows(), cfg.d_v);
  EXPECT_EQ(z.cols(), 3999);
  // Nearest neighbour: frame t copies video frame floor(centre * fps).
  for (int t : {0, 500, 1234, 3998}) {
    const double centre = (t * 16 + 16) / 16000.0;
    const int k = static_cast<int>(std::floor(centre * 25));
    const auto zk = visual_encode<float>(p, lips_for(cfg, 64000, 3), 64000);
    EXPECT_EQ(z.col(t), zk.col(t));
    EXPECT_EQ(z.col(t), z.col(k * 640 / 16));  // start of that video frame
  }
}

TEST(VisualEncode, SingleFrameIsCopied) {
  ModelConfig cfg = ModelConfig::desk();
  const auto p = init_params<float>(cfg, 4);
  LipFeatures one = lips_for(cfg, 32, 1);
  one.frames = 1;
  one.data.resize(cfg.lip_dim);
  const auto z = visual_encode<float>(p, one, 32);
  EXPECT_EQ(z.cols(), 1);
}

TEST(VisualEncode, ConstantLipsGiveConstantRows) {
  const ModelConfig cfg = ModelConfig::desk();
  const auto p = init_params<float>(cfg, 5);
  LipFeatures f = lips_for(cfg, 16000, 1);
  for (int k = 0; k < f.frames; ++k)
    for (int d = 0; d < f.dims; ++d) f.at(k, d) = 0.1f * static_cast<float>(d);
  const auto z = visual_encode<float>(p, f, 16000);
  for (Eigen::Index t = 1; t < z.cols(); ++t)
    EXPECT_TRUE(z.col(t).isApprox(z.col(0), 1e-5f)) << t;
}

TEST(VisualEncode, DurationMismatchRejected) {
  const ModelConfig cfg = ModelConfig::desk();
  const auto p = init_params<float>(cfg, 5);
  EXPECT_THROW(visual_encode<float>(p, lips_for(cfg, 64000, 1), 32000), ContractError);
  // Within one video frame is accepted.
  EXPECT_NO_THROW(visual_encode<float>(p, lips_for(cfg, 64000, 1), 64000 - 500));
}

TEST(VisualEncode, LinearUpsamplingStaysBetweenNeighbours) {
  ModelConfig cfg = ModelConfig::desk();
  cfg.upsampling = Upsampling::linear;
  const auto p = init_params<float>(cfg, 6);
  const auto z = visual_encode<float>(p, lips_for(cfg, 16000, 1), 16000);
  EXPECT_EQ(z.cols(), cfg.num_frames(16000));
  EXPECT_TRUE(z.allFinite());
}

TEST(VoiceprintEncode, UnitNorm) {
  const ModelConfig cfg = ModelConfig::desk();
  const auto p = init_params<float>(cfg, 7);
  for (std::size_t n : {32u, 1000u, 16000u}) {
    const auto e = voiceprint_encode<float, float>(p, noise(n, n));
    EXPECT_EQ(e.rows(), cfg.d_a);
    EXPECT_NEAR(e.norm(), 1.0, 1e-6);
  }
  EXPECT_THROW((voiceprint_encode<float, float>(p, noise(31, 1))), ContractError);
}

TEST(VoiceprintEncode, RepetitionIdempotent) {
  const ModelConfig cfg = ModelConfig::desk();
  const auto p = init_params<float>(cfg, 8);
  const auto x = noise(32 * 300, 9);
  auto xx = x;
  xx.insert(xx.end(), x.begin(), x.end());
  const auto a = voiceprint_encode<float, float>(p, x);
  const auto b = voiceprint_encode<float, float>(p, xx);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(VoiceprintEncode, DistinctSignalsDistinctEmbeddings) {
  const ModelConfig cfg = ModelConfig::desk();
  const auto p = init_params<float>(cfg, 10);
  std::vector<float> low(16000), high(16000);
  for (std::size_t i = 0; i < low.size(); ++i) {
    low[i] = static_cast<float>(0.3 * std::sin(2 * M_PI * 120 * i / 16000.0));
    high[i] = static_cast<float>(0.3 * std::sin(2 * M_PI * 2400 * i / 16000.0));
  }
  const auto a = voiceprint_encode<float, float>(p, low);
  const auto b = voiceprint_encode<float, float>(p, high);
  EXPECT_LT(a.col(0).dot(b.col(0)), 1.0 - 1e-4);
}

TEST(Sdvad, ZeroEmbeddingGivesConstantSigmoidBias) {
  const ModelConfig cfg = small();
  const auto p = init_params<float>(cfg, 11);
  const Mat<float> zero = Mat<float>::Zero(cfg.d_av, 1);
  const Mat<float> z = Eigen::Map<const Mat<float>>(noise(cfg.d_in * 50, 3).data(), cfg.d_in, 50);
  const RowVec<float> a = detect_offscreen_activity(p.sdvad, zero, z);
  const float expect = nn::sigmoid(p.sdvad.score.bias(0, 0));
  for (Eigen::Index t = 0; t < a.size(); ++t) EXPECT_EQ(a(t), expect);
}

TEST(Sdvad, OutputsInUnitInterval) {
  const ModelConfig cfg = small();
  auto p = init_params<float>(cfg, 12);
  p.sdvad.score.weight *= 50.0f;  // push towards saturation
  const Mat<float> voice = Eigen::Map<const Mat<float>>(noise(cfg.d_av, 1, 5.0).data(), cfg.d_av, 1);
  const Mat<float> z = Eigen::Map<const Mat<float>>(noise(cfg.d_in * 200, 3, 5.0).data(), cfg.d_in, 200);
  const RowVec<float> a = detect_offscreen_activity(p.sdvad, voice, z);
  EXPECT_GE(a.minCoeff(), 0.0f);
  EXPECT_LE(a.maxCoeff(), 1.0f);
}

TEST(Sdvad, WidthMismatchRejected) {
  const ModelConfig cfg = small();
  const auto p = init_params<float>(cfg, 12);
  EXPECT_THROW(detect_offscreen_activity<float>(p.sdvad, Mat<float>(Mat<float>::Zero(cfg.d_av + 1, 1)),
                                                Mat<float>(Mat<float>::Zero(cfg.d_in, 4))),
               ContractError);
  EXPECT_THROW(detect_offscreen_activity<float>(p.sdvad, Mat<float>(Mat<float>::Zero(cfg.d_av, 1)),
                                                Mat<float>(Mat<float>::Zero(cfg.d_in + 2, 4))),
               ContractError);
}

TEST(FuseClues, DegenerateAttention) {
  const int d = 6, frames = 9;
  const Mat<float> v = Eigen::Map<const Mat<float>>(noise(d * frames, 1).data(), d, frames);
  const Mat<float> a = Eigen::Map<const Mat<float>>(noise(d, 2).data(), d, 1);
  const RowVec<float> zeros = RowVec<float>::Zero(frames);
  const RowVec<float> ones = RowVec<float>::Ones(frames);
  EXPECT_EQ(fuse_clues<float>(v, a, &zeros), v);
  EXPECT_EQ(fuse_clues<float>(v, a, &ones), fuse_clues<float>(v, a, nullptr));
  const Mat<float> plain = v.colwise() + a.col(0);
  EXPECT_EQ(fuse_clues<float>(v, a, nullptr), plain);

  RowVec<float> step = RowVec<float>::Zero(frames);
  const int k = 4;
  step.tail(frames - k).setOnes();
  const Mat<float> mixed = fuse_clues<float>(v, a, &step);
  EXPECT_EQ(mixed.leftCols(k), v.leftCols(k));
  EXPECT_EQ(mixed.rightCols(frames - k), plain.rightCols(frames - k));
  EXPECT_THROW(fuse_clues<float>(v, Mat<float>::Zero(d + 1, 1), nullptr), ContractError);
}

TEST(ExtractorBlock, ShapeAndResidualIdentity) {
  const ModelConfig cfg = small();
  auto p = init_params<float>(cfg, 13);
  const std::size_t n = 4000;
  const auto mix = noise(n, 1);
  const auto lips = lips_for(cfg, n, 2);
  const auto enroll = noise(3200, 3);
  const Latent<float> z0 = audio_encode<float, float>(p, mix);
  const Latent<float> v = visual_encode<float>(p, lips, n);
  const Mat<float> a = voiceprint_encode<float, float>(p, enroll);
  RowVec<float> att;
  const Latent<float> z1 = extractor_block<float>(p, 0, z0, v, a, &att);
  EXPECT_EQ(z1.rows(), cfg.d_in);
  EXPECT_EQ(z1.cols(), z0.cols());
  EXPECT_EQ(att.size(), z0.cols());
  EXPECT_EQ(extractor_block<float>(p, 0, z0, v, a, &att), z1);

  for (auto& l : p.blocks[0].tcn)
    for (auto* m : {&l.in.weight, &l.in.bias, &l.out.weight, &l.out.bias, &l.dconv.weight,
                    &l.act1.alpha, &l.act2.alpha, &l.norm1.gain, &l.norm1.shift,
                    &l.norm2.gain, &l.norm2.shift})
      m->setZero();
  EXPECT_EQ(extractor_block<float>(p, 0, z0, v, a, &att), z0);
  EXPECT_THROW(extractor_block<float>(p, cfg.num_blocks, z0, v, a, &att), ContractError);
}

TEST(Forward, OutputLengthEqualsInputLength) {
  const ModelConfig cfg = ModelConfig::desk();
  const auto p = init_params<float>(cfg, 14);
  const auto enroll = noise(8000, 3);
  for (std::size_t n : {63985u, 64000u, 64007u}) {
    const auto mix = noise(n, n);
    const auto lips = lips_for(cfg, n, 2);
    const auto r = forward(p, ModelInput{mix, &lips, enroll});
    EXPECT_EQ(r.estimate.size(), n);
    EXPECT_EQ(static_cast<int>(r.attentions.size()), cfg.num_blocks);
    for (const auto& a : r.attentions) {
      EXPECT_EQ(a.size(), cfg.num_frames(n));
      EXPECT_GE(a.minCoeff(), 0.0f);
      EXPECT_LE(a.maxCoeff(), 1.0f);
    }
  }
}

TEST(Forward, MaskOverrides) {
  const ModelConfig cfg = small();
  const auto p = init_params<float>(cfg, 15);
  const std::size_t n = 3000;
  const auto mix = noise(n, 1);
  const auto lips = lips_for(cfg, n, 2);
  const auto enroll = noise(1600, 3);
  const ModelInput in{mix, &lips, enroll};

  const auto ones = forward<float>(p, in, nullptr, ForwardOptions{MaskOverride::ones});
  const Mat<float> dec = p.decoder.forward(audio_encode<float, float>(p, mix));
  const auto expected = nn::overlap_add(dec, cfg.hop, n);
  EXPECT_EQ(ones.estimate, expected);

  const auto zeros = forward<float>(p, in, nullptr, ForwardOptions{MaskOverride::zeros});
  for (float v : zeros.estimate) EXPECT_EQ(v, 0.0f);
}

TEST(Forward, NoAttentionMeansNoAttentionOutputs) {
  ModelConfig cfg = small();
  cfg.use_attention = false;
  const auto p = init_params<float>(cfg, 16);
  const auto mix = noise(2000, 1);
  const auto lips = lips_for(cfg, 2000, 2);
  const auto enroll = noise(1600, 3);
  EXPECT_TRUE(forward(p, ModelInput{mix, &lips, enroll}).attentions.empty());
}

TEST(Forward, Deterministic) {
  const ModelConfig cfg = small();
  const auto p1 = init_params<float>(cfg, 17);
  const auto p2 = init_params<float>(cfg, 17);
  const auto mix = noise(5000, 1);
  const auto lips = lips_for(cfg, 5000, 2);
  const auto enroll = noise(1600, 3);
  const ModelInput in{mix, &lips, enroll};
  EXPECT_EQ(forward(p1, in).estimate, forward(p2, in).estimate);
}

TEST(Forward, RandomLengthsAndLayouts) {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig cfg = small();
    cfg.window_len = 4 + static_cast<int>(rng() % 60);
    cfg.hop = 1 + static_cast<int>(rng() % cfg.window_len);
    cfg.num_blocks = 1;
    const std::size_t n = cfg.window_len + rng() % 3000;
    const auto p = init_params<float>(cfg, trial);
    const auto mix = noise(n, trial);
    const auto lips = lips_for(cfg, n, 2);
    const auto enroll = noise(cfg.window_len * 3, 3);
    const auto r = forward(p, ModelInput{mix, &lips, enroll});
    EXPECT_EQ(r.estimate.size(), n);
  }
}

TEST(Gradient, TinyConfigMatchesFiniteDifferences) {
  const ModelConfig cfg = ModelConfig::tiny();
  auto p = init_params<double>(cfg, 7);
  const auto mix = noise(256, 1);
  const auto enroll = noise(200, 2);
  const auto target = noise(256, 3);
  LipFeatures lips;
  lips.fps = 25;
  lips.frames = 1;
  lips.dims = cfg.lip_dim;
  lips.data = noise(cfg.lip_dim, 4, 1.0);
  const ModelInput in{mix, &lips, enroll};
  const std::vector<double> ref(target.begin(), target.end());
  std::vector<double> oracle(cfg.num_frames(256));
  for (std::size_t i = 0; i < oracle.size(); ++i) oracle[i] = i < oracle.size() / 2;

  auto objective = [&](const ModelParams<double>& q, ModelParams<double>* g) {
    ForwardTrace<double> tr;
    const auto r = forward(q, in, &tr);
    std::vector<double> d_est(256);
    double loss = loss_on_plus_off_grad<double>(r.estimate, ref, d_est);
    std::vector<RowVec<double>> d_att;
    for (const auto& a : r.attentions) {
      RowVec<double> ga(a.size());
      loss += vad_cross_entropy_grad<double>(std::span<const double>(a.data(), a.size()), oracle,
                                             std::span<double>(ga.data(), ga.size()));
      d_att.push_back(ga);
    }
    if (g) backward(q, tr, std::span<const double>(d_est), d_att, *g);
    return loss;
  };
  auto grad = p.zeros_like();
  objective(p, &grad);
  auto pt = p.tensors();
  auto gt = grad.tensors();
  int total = 0, bad = 0;
  for (std::size_t k = 0; k < pt.size(); ++k) {
    for (Eigen::Index i = 0; i < pt[k].value->size(); ++i) {
      double& x = pt[k].value->data()[i];
      const double x0 = x;
      x = x0 + 1e-6;
      const double lp = objective(p, nullptr);
      x = x0 - 1e-6;
      const double lm = objective(p, nullptr);
      x = x0;
      const double num = (lp - lm) / 2e-6;
      const double an = gt[k].value->data()[i];
      const double rel = std::abs(num - an) / std::max({std::abs(num), std::abs(an), 1e-6});
      ++total;
      bad += rel > 1e-3;
    }
  }
  EXPECT_LE(bad, total / 20) << bad << " of " << total;
}

TEST(ParameterCount, PointwiseWithBias) {
  Rng rng(1);
  nn::Pointwise<float> pw;
  pw.init(64, 48, true, rng);
  nn::TensorList<float> list;
  pw.collect("x", list);
  std::size_t n = 0;
  for (const auto& t : list) n += t.value->size();
  EXPECT_EQ(n, 64u * 48u + 48u);
}

TEST(ParameterCount, ComponentsSumToTotal) {
  const auto p = init_params<float>(ModelConfig::desk(), 1);
  const auto c = count_parameters(p);
  std::size_t sum = 0;
  for (const auto& [_, v] : c.per_component) sum += v;
  EXPECT_EQ(sum, c.total);
  EXPECT_TRUE(c.per_component.count("sdvad"));
  EXPECT_TRUE(c.per_component.count("extractor"));
}

TEST(ParameterCount, AttentionCostsUnderOnePercentAtLargeScale) {
  ModelConfig with = ModelConfig::large();
  ModelConfig without = with;
  without.use_attention = false;
  const auto a = count_parameters(init_params<float>(with, 1)).total;
  const auto b = count_parameters(init_params<float>(without, 1)).total;
  EXPECT_GT(a, b);
  EXPECT_LT(static_cast<double>(a - b) / static_cast<double>(b), 0.01);
}

TEST(ModelConfig, JsonRoundTripAndValidation) {
  ModelConfig c = ModelConfig::large();
  c.upsampling = Upsampling::linear;
  const json j = c;
  const ModelConfig back = model_config_from_json(j);
  EXPECT_EQ(json(back), j);
  EXPECT_THROW(model_config_from_json(json{{"d_in", 0}}), ConfigError);
  EXPECT_THROW(model_config_from_json(json{{"hop", 64}}), ConfigError);
  EXPECT_THROW(model_config_from_json(json{{"bogus", 1}}), ConfigError);
  EXPECT_EQ(model_config_from_json(json{{"preset", "large"}}).d_av, 256);
}

}  // namespace
}  // namespace avse
