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


// Acceptance runner: one PASS/FAIL line per criterion.
//
//   avse_acceptance            criteria 1-10 and 12
//   avse_acceptance --only 6   a single criterion
//   avse_acceptance --slow     also the long directional run (11)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "avse/baseline.hpp"
#include "test_support.hpp"

using namespace avse;
using avse::testing::ScratchDir;
using avse::testing::slurp;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Dataset make_dataset(const MixSpec& spec, Split split, std::size_t n) {
  return avse::testing::synth_dataset(spec, split, n);
}

// Long-double restatements of the metric definitions.
namespace oracle {

long double snr(const std::vector<long double>& est, const std::vector<long double>& ref) {
  long double s = 0, e = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    s += ref[i] * ref[i];
    e += (est[i] - ref[i]) * (est[i] - ref[i]);
  }
  const long double v = 10 * std::log10(s / std::max(e, 1e-10L * s));
  return std::clamp(v, -60.0L, 60.0L);
}

long double si_sdr(const std::vector<long double>& est, const std::vector<long double>& ref) {
  long double dot = 0, rr = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    dot += est[i] * ref[i];
    rr += ref[i] * ref[i];
  }
  const long double a = dot / rr;
  long double t = 0, r = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    t += a * ref[i] * a * ref[i];
    r += (est[i] - a * ref[i]) * (est[i] - a * ref[i]);
  }
  if (t == 0) return -60;
  if (r == 0) return 60;
  return std::clamp(10 * std::log10(t / r), -60.0L, 60.0L);
}

long double bce(const std::vector<long double>& p, const std::vector<long double>& v) {
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const long double a = std::clamp(p[i], 1e-7L, 1 - 1e-7L);
    s -= v[i] * std::log(a) + (1 - v[i]) * std::log(1 - a);
  }
  return s / p.size();
}

}  // namespace oracle

Outcome criterion_1() {
  const auto t0 = Clock::now();
  const std::vector<double> ref{1, 1, 1, 1}, est{1, 1, 1, 0};
  const std::vector<long double> lref{1, 1, 1, 1}, lest{1, 1, 1, 0};
  struct Check {
    const char* name;
    double got, oracle, hand;
  };
  const double snr = snr_db<double>(est, ref);
  const double ce = vad_cross_entropy<double>(std::vector<double>{0.9, 0.2},
                                              std::vector<double>{1, 0});
  const std::vector<Check> checks{
      {"snr_db", snr, static_cast<double>(oracle::snr(lest, lref)), 6.0206},
      {"loss_on_plus_off", loss_on_plus_off<double>(est, ref),
       -static_cast<double>(oracle::snr(lest, lref)), -6.0206},
      {"si_sdr_db", si_sdr_db<double>(est, ref), static_cast<double>(oracle::si_sdr(lest, lref)),
       4.7712},
      {"vad_cross_entropy", ce, static_cast<double>(oracle::bce({0.9L, 0.2L}, {1, 0})), 0.16425},
      {"vad_cross_entropy(0.5)",
       vad_cross_entropy<double>(std::vector<double>(5, 0.5), std::vector<double>{1, 0, 1, 1, 0}),
       static_cast<double>(std::log(2.0L)), 0.6931},
      {"total_loss", total_loss(-snr, ce, 1.0),
       static_cast<double>(-oracle::snr(lest, lref) + oracle::bce({0.9L, 0.2L}, {1, 0})),
       -5.85635},
      {"snr_db(2ref)", snr_db<double>(std::vector<double>{2, 2, 2, 2}, ref), 0.0, 0.0},
      {"si_sdr_db(0.5ref)", si_sdr_db<double>(std::vector<double>{0.5, 0.5, 0.5, 0.5}, ref), 60.0,
       60.0},
      {"si_sdr_db(orth)", si_sdr_db<double>(std::vector<double>{0, 1}, std::vector<double>{1, 0}),
       -60.0, -60.0},
  };
  double worst = 0;
  std::string failed;
  for (const auto& c : checks) {
    const double err = std::max(std::abs(c.got - c.oracle), std::abs(c.got - c.hand));
    worst = std::max(worst, err);
    if (!(err < 1e-4)) failed += std::string(" ") + c.name;
  }
  const double secs = seconds_since(t0);
  return {failed.empty() && secs < 1.0,
          fmt("%zu examples, max |err| %.2e, %.3f s%s", checks.size(), worst, secs,
              failed.empty() ? "" : (" failed:" + failed).c_str())};
}

Outcome criterion_2() {
  Rng rng(2);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> ref(4000), est(4000);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      ref[i] = gaussian(rng);
      est[i] = ref[i] + 0.5 * gaussian(rng);
    }
    const double base = si_sdr_db<double>(est, ref);
    for (double a : {0.1, 1.0, 7.0}) {
      std::vector<double> scaled(est);
      for (auto& v : scaled) v *= a;
      worst = std::max(worst, std::abs(si_sdr_db<double>(scaled, ref) - base));
    }
  }
  std::vector<double> ref(1000), twice(1000);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ref[i] = gaussian(rng);
    twice[i] = 2 * ref[i];
  }
  const double snr2 = snr_db<double>(twice, ref);
  const double si2 = si_sdr_db<double>(twice, ref);
  return {worst < 1e-6 && snr2 == 0.0 && si2 == 60.0,
          fmt("max SI-SDR drift %.2e dB; snr_db(2ref)=%g, si_sdr_db(2ref)=%g", worst, snr2, si2)};
}

Outcome criterion_3() {
  const auto t0 = Clock::now();
  ModelConfig cfg = ModelConfig::tiny();
  cfg.num_blocks = 1;
  auto p = init_params<double>(cfg, 7);
  Rng rng(3);
  const std::size_t n = 256;
  std::vector<float> mix(n), target(n), enroll(200);
  for (auto& v : mix) v = static_cast<float>(0.3 * gaussian(rng));
  for (auto& v : target) v = static_cast<float>(0.3 * gaussian(rng));
  for (auto& v : enroll) v = static_cast<float>(0.3 * gaussian(rng));
  LipFeatures lips;
  lips.frames = 1;
  lips.dims = cfg.lip_dim;
  for (int i = 0; i < cfg.lip_dim; ++i) lips.data.push_back(static_cast<float>(gaussian(rng)));
  const ModelInput in{mix, &lips, enroll};
  const std::vector<double> ref(target.begin(), target.end());
  std::vector<double> vad(static_cast<std::size_t>(cfg.num_frames(n)));
  for (std::size_t i = 0; i < vad.size(); ++i) vad[i] = i >= vad.size() / 3;

  auto objective = [&](const ModelParams<double>& q, ModelParams<double>* g) {
    ForwardTrace<double> tr;
    const auto r = forward(q, in, &tr);
    std::vector<double> d_est(n);
    double loss = loss_on_plus_off_grad<double>(r.estimate, ref, d_est);
    std::vector<RowVec<double>> d_att;
    for (const auto& a : r.attentions) {
      RowVec<double> ga(a.size());
      loss += vad_cross_entropy_grad<double>(
          std::span<const double>(a.data(), static_cast<std::size_t>(a.size())), vad,
          std::span<double>(ga.data(), static_cast<std::size_t>(ga.size())));
      d_att.push_back(ga);
    }
    if (g) backward(q, tr, std::span<const double>(d_est), d_att, *g);
    return loss;
  };
  auto grad = p.zeros_like();
  objective(p, &grad);
  auto pt = p.tensors();
  const auto gt = grad.tensors();
  std::size_t total = 0, good = 0;
  const double h = 1e-6;
  for (std::size_t k = 0; k < pt.size(); ++k) {
    for (Eigen::Index i = 0; i < pt[k].value->size(); ++i) {
      double& x = pt[k].value->data()[i];
      const double x0 = x;
      x = x0 + h;
      const double lp = objective(p, nullptr);
      x = x0 - h;
      const double lm = objective(p, nullptr);
      x = x0;
      const double num = (lp - lm) / (2 * h);
      const double an = gt[k].value->data()[i];
      const double rel = std::abs(num - an) / std::max({std::abs(num), std::abs(an), 1e-8});
      ++total;
      good += rel < 1e-3;
    }
  }
  const double frac = static_cast<double>(good) / static_cast<double>(total);
  const double secs = seconds_since(t0);
  return {frac >= 0.95 && secs < 120,
          fmt("%zu/%zu parameters (%.2f%%) within 1e-3 relative error, %.1f s", good, total,
              100 * frac, secs)};
}

Outcome criterion_4() {
  Rng rng(4);
  int length_ok = 0;
  bool att_ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.window_len = 2 + static_cast<int>(rng() % 79);
    cfg.hop = 1 + static_cast<int>(rng() % cfg.window_len);
    cfg.num_blocks = 1 + static_cast<int>(rng() % 2);
    const std::size_t n = cfg.window_len + rng() % 8000;
    const auto p = init_params<float>(cfg, rng());
    std::vector<float> mix(n), enroll(cfg.window_len * 2 + rng() % 2000);
    for (auto& v : mix) v = static_cast<float>(gaussian(rng));
    for (auto& v : enroll) v = static_cast<float>(gaussian(rng));
    LipFeatures lips;
    lips.dims = cfg.lip_dim;
    lips.frames = std::max(1, static_cast<int>(std::llround(n / 16000.0 * 25)));
    lips.data.resize(static_cast<std::size_t>(lips.frames) * lips.dims);
    for (auto& v : lips.data) v = static_cast<float>(gaussian(rng));
    const auto r = forward(p, ModelInput{mix, &lips, enroll});
    length_ok += r.estimate.size() == n;
    for (const auto& a : r.attentions) att_ok = att_ok && a.minCoeff() >= 0 && a.maxCoeff() <= 1;
  }
  // Degenerate attention: a == 0 drops the voiceprint, a == 1 adds it everywhere.
  Mat<double> vis = Mat<double>::Random(6, 9);
  Mat<double> voice = Mat<double>::Random(6, 1);
  const RowVec<double> zeros = RowVec<double>::Zero(9), ones = RowVec<double>::Ones(9);
  const Mat<double> f0 = fuse_clues(vis, voice, &zeros);
  const Mat<double> f1 = fuse_clues(vis, voice, &ones);
  Mat<double> expect1 = vis;
  for (Eigen::Index t = 0; t < 9; ++t)
    for (Eigen::Index c = 0; c < 6; ++c) expect1(c, t) = vis(c, t) + voice(c, 0);
  const bool deg_ok = f0 == vis && f1 == expect1 && fuse_clues<double>(vis, voice, nullptr) == f1;
  return {length_ok == 50 && att_ok && deg_ok,
          fmt("%d/50 lengths preserved; attention in [0,1]: %s; a=0/a=1 bit-exact: %s", length_ok,
              att_ok ? "yes" : "no", deg_ok ? "yes" : "no")};
}

Outcome criterion_5() {
  const auto t0 = Clock::now();
  ModelConfig cfg = ModelConfig::desk();
  cfg.use_attention = false;
  MixSpec spec;
  spec.window_s = 1.0;
  spec.off_duration_range_s = {0.5, 1.0};
  const Dataset data = make_dataset(spec, Split::train, 8);
  TrainConfig tc;
  tc.muting = false;
  tc.batch_size = 1;
  auto p = init_params<float>(cfg, 5);
  Adam<float> opt(p, tc.adam());
  Rng rng(5);
  std::int64_t steps = 0;
  double snr = evaluate_estimates(data, model_estimator(p)).sdr;
  const double start = snr;
  while (snr < 10.0 && steps < 2000) {
    train_epoch(p, opt, data, tc, tc.lr0, rng, steps);
    snr = evaluate_estimates(data, model_estimator(p)).sdr;
  }
  const double secs = seconds_since(t0);
  return {snr >= 10.0 && steps <= 2000 && secs < 600,
          fmt("training SNR %.2f -> %.2f dB after %lld steps, %.0f s", start, snr,
              static_cast<long long>(steps), secs)};
}

Outcome criterion_6() {
  const auto t0 = Clock::now();
  ModelConfig cfg = ModelConfig::desk();
  cfg.tcn_channels = 64;
  MixSpec spec;
  spec.window_s = 1.0;
  spec.off_duration_range_s = {0.0, 1.0};
  spec.test_off_duration_range_s = {0.0, 1.0};
  const Dataset train = make_dataset(spec, Split::train, 256);
  const Dataset test = make_dataset(spec, Split::test, 64);
  TrainConfig tc;
  tc.muting = false;
  tc.batch_size = 4;
  tc.lambda = 3.0;
  tc.lr0 = 2e-3;
  auto p = init_params<float>(cfg, 6);
  Adam<float> opt(p, tc.adam());
  Rng rng(6);
  std::int64_t steps = 0;
  double acc = 0;
  int epoch = 0;
  const double budget_s = 14 * 60;
  while (acc < 0.9 && seconds_since(t0) < budget_s) {
    train_epoch(p, opt, train, tc, tc.lr0, rng, steps);
    acc = evaluate_estimates(test, model_estimator(p), TargetKind::mixture, tc.lambda)
              .attention_accuracy.value_or(0);
    ++epoch;
  }
  const double secs = seconds_since(t0);
  return {acc >= 0.9 && secs < 900,
          fmt("held-out frame accuracy %.3f after %d epochs, %.0f s", acc, epoch, secs)};
}

Outcome criterion_7() {
  const Dataset d = make_dataset(avse::testing::tiny_spec(), Split::train, 1);
  const MixtureSample& s = d.samples[0];
  Rng rng(7);
  const int n = 10000;
  int on = 0, off = 0, both = 0;
  for (int i = 0; i < n; ++i) {
    const MixtureSample m = apply_muting(s, 0.2, 0.2, rng);
    const bool on_silent = m.meta.mute == MuteFlag::on;
    const bool off_silent = m.meta.mute == MuteFlag::off;
    on += on_silent;
    off += off_silent;
    bool on_zero = true, off_zero = true;
    for (float v : m.on_screen.samples) on_zero = on_zero && v == 0.0f;
    for (float v : m.off_screen.samples) off_zero = off_zero && v == 0.0f;
    both += on_zero && off_zero;
  }
  const double r_on = static_cast<double>(on) / n, r_off = static_cast<double>(off) / n;
  return {std::abs(r_on - 0.2) <= 0.02 && std::abs(r_off - 0.2) <= 0.02 && both == 0,
          fmt("on-screen muted %.4f, off-screen muted %.4f, both muted %d of %d", r_on, r_off,
              both, n)};
}

Outcome criterion_8() {
  MixSpec spec;  // 4 s windows
  SyntheticBank bank(Split::train, spec.lip_dim);
  double worst = 0;
  std::size_t checked = 0, linear = 0;
  const std::size_t n = 1000;
  for (std::size_t i = 0; i < n; ++i) {
    const MixtureSample m = generate_sample(bank, spec, Split::train, i);
    if (m.meta.snr_off_db) {
      worst = std::max(worst, std::abs(measured_snr_db(m.on_screen, m.off_screen) -
                                       *m.meta.snr_off_db));
      ++checked;
    }
    worst = std::max(worst, std::abs(measured_snr_db(m.on_screen, m.interference) -
                                     m.meta.snr_interferers_db.at(0)));
    ++checked;
    bool ok = true;
    for (std::size_t k = 0; k < m.mix.size(); ++k)
      ok = ok && m.mix.samples[k] == m.on_screen.samples[k] + m.off_screen.samples[k] +
                                         m.interference.samples[k] &&
           m.target.samples[k] == m.on_screen.samples[k] + m.off_screen.samples[k];
    linear += ok;
  }
  return {worst <= 0.05 && linear == n,
          fmt("%zu SNRs over %zu samples, max deviation %.2e dB; %zu/%zu mixtures sample-exact",
              checked, n, worst, linear, n)};
}

Outcome criterion_9() {
  Rng rng(9);
  const ScheduleConfig cfg{0.001, 3, 4};
  std::size_t mismatches = 0, stopped_runs = 0;
  for (int seq = 0; seq < 1000; ++seq) {
    // Reference: lr, best, counter, halvings, stop flag.
    double lr = cfg.lr0, best = std::numeric_limits<double>::infinity();
    int stale = 0, halvings = 0;
    bool stop = false;
    ScheduleState s = ScheduleState::initial(cfg);
    double level = 10.0;
    const int len = 20 + static_cast<int>(rng() % 120);
    for (int e = 0; e < len; ++e) {
      level += uniform(rng, -1.0, 0.6);
      const double loss = std::round(level * 4) / 4;  // quantised: ties happen
      if (!stop) {
        if (loss < best) {
          best = loss;
          stale = 0;
        } else if (++stale == 3) {
          stale = 0;
          if (halvings == 4) stop = true;
          else {
            lr *= 0.5;
            ++halvings;
          }
        }
      }
      s = lr_schedule_step(s, loss, cfg);
      if (s.current_lr != lr || s.stopped != stop || s.halvings_done != halvings ||
          s.epochs_since_improve != stale || s.best_val_loss != best)
        ++mismatches;
    }
    stopped_runs += stop;
  }
  return {mismatches == 0,
          fmt("1000 sequences, %zu mismatching steps, %zu runs reached the stop", mismatches,
              stopped_runs)};
}

Outcome criterion_10() {
  std::string detail;
  bool ok = true;
  for (const auto& [name, cfg] :
       std::vector<std::pair<std::string, ModelConfig>>{{"desk", ModelConfig::desk()},
                                                        {"large", ModelConfig::large()}}) {
    const std::size_t proposed = Model<float>(cfg, 1).count_parameters().total;
    ModelConfig no_att = cfg;
    no_att.use_attention = false;
    const std::size_t plain = Model<float>(no_att, 1).count_parameters().total;
    const std::size_t vis =
        build_single_clue_model(ClueMode::visual, cfg, 1).count_parameters().total;
    const std::size_t voi =
        build_single_clue_model(ClueMode::voiceprint, cfg, 1).count_parameters().total;
    const double att = 100.0 * static_cast<double>(proposed - plain) / static_cast<double>(plain);
    ok = ok && proposed < vis + voi;
    if (name == "large") ok = ok && att < 1.0;
    detail += fmt("%s: proposed %zu < visual %zu + voiceprint %zu = %zu, attention +%.3f%%; ",
                  name.c_str(), proposed, vis, voi, vis + voi, att);
  }
  return {ok, detail.substr(0, detail.size() - 2)};
}

Outcome criterion_11() {
  const auto t0 = Clock::now();
  const ModelConfig cfg = ModelConfig::desk();
  MixSpec spec;
  spec.window_s = 2.0;
  spec.off_duration_range_s = {1.0, 2.0};
  spec.test_off_duration_range_s = {0.0, 2.0};
  const Dataset train = make_dataset(spec, Split::train, 512);
  const Dataset val = make_dataset(spec, Split::val, 64);
  const Dataset test = make_dataset(spec, Split::test, 64);
  TrainConfig tc;
  tc.epochs_max = 15;
  tc.seed = 11;
  const FitResult proposed = fit(cfg, tc, train, val);
  const FitResult visual = fit(single_clue_config(ClueMode::visual, cfg),
                               single_clue_train_config(ClueMode::visual, tc), train, val);
  const FitResult voice = fit(single_clue_config(ClueMode::voiceprint, cfg),
                              single_clue_train_config(ClueMode::voiceprint, tc), train, val);
  const double p = evaluate_estimates(test, model_estimator(proposed.best)).si_sdri;
  const double b = evaluate_estimates(test, baseline_estimator(visual.best, voice.best)).si_sdri;
  return {p >= b - 0.25, fmt("proposed %.3f dB vs baseline %.3f dB SI-SDRi (margin -0.25), %.0f s",
                             p, b, seconds_since(t0))};
}

Outcome criterion_12() {
  const ModelConfig cfg = ModelConfig::tiny();
  const MixSpec spec = avse::testing::tiny_spec(cfg);
  const Dataset train = make_dataset(spec, Split::train, 6);
  const Dataset val = make_dataset(spec, Split::val, 3);
  TrainConfig tc;
  tc.epochs_max = 3;
  tc.batch_size = 2;
  ScratchDir a("acc12a"), b("acc12b");
  FitOptions fa, fb;
  fa.run_dir = a.str();
  fb.run_dir = b.str();
  const FitResult ra = fit(cfg, tc, train, val, fa);
  fit(cfg, tc, train, val, fb);
  bool same = true;
  for (const char* f : {"metrics.csv", "report.json", "best.ckpt", "last.ckpt", "config.json"})
    same = same && slurp(a.path() / f) == slurp(b.path() / f);

  const Checkpoint back = load_checkpoint(a.str("last.ckpt"));
  bool exact = true;
  for (const auto& s : val.samples)
    exact = exact && forward(back.params, model_input(s)).estimate ==
                         forward(ra.last, model_input(s)).estimate;
  save_checkpoint(a.str("again.ckpt"), back);
  const bool bytes = slurp(a.path() / "again.ckpt") == slurp(a.path() / "last.ckpt");
  return {same && exact && bytes,
          fmt("rerun artifacts byte-identical: %s; reloaded forward bit-exact: %s; re-save "
              "identical: %s",
              same ? "yes" : "no", exact ? "yes" : "no", bytes ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int only = 0;
  bool slow = false;
  app.add_option("--only", only, "Run a single criterion")->check(CLI::Range(1, 12));
  app.add_flag("--slow", slow, "Include the long directional-quality run");
  CLI11_PARSE(app, argc, argv);

  const std::map<int, std::function<Outcome()>> all{
      {1, criterion_1},  {2, criterion_2},  {3, criterion_3},   {4, criterion_4},
      {5, criterion_5},  {6, criterion_6},  {7, criterion_7},   {8, criterion_8},
      {9, criterion_9},  {10, criterion_10}, {11, criterion_11}, {12, criterion_12}};
  int failures = 0;
  for (const auto& [id, run] : all) {
    if (only ? id != only : (id == 11 && !slow)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
