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


// Training loop: multi-task objective, plateau schedule, validation,
// checkpointing, run directories and the muting grid search.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "avse/checkpoint.hpp"
#include "avse/metrics.hpp"
#include "avse/mixsim.hpp"
#include "avse/model.hpp"
#include "avse/optim.hpp"
#include "avse/schedule.hpp"

namespace avse {

// Which waveform a model is trained and scored against.
enum class TargetKind { mixture, on_screen, off_screen };

NLOHMANN_JSON_SERIALIZE_ENUM(TargetKind, {{TargetKind::mixture, "mixture"},
                                          {TargetKind::on_screen, "on_screen"},
                                          {TargetKind::off_screen, "off_screen"}})

struct TrainConfig {
  double lr0 = 0.001;
  int plateau_epochs = 3;
  int max_halvings = 4;
  int epochs_max = 200;
  int batch_size = 4;
  double lambda = 1.0;
  double p_on = 0.2;
  double p_off = 0.2;
  bool muting = true;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;
  std::vector<std::string> frozen;  // parameter-name prefixes
  std::int64_t max_steps = 0;       // 0: no cap
  TargetKind target = TargetKind::mixture;

  ScheduleConfig schedule() const { return {lr0, plateau_epochs, max_halvings}; }
  AdamConfig adam() const {
    AdamConfig a;
    a.clip_norm = clip_norm;
    return a;
  }

  void validate() const {
    if (!(lr0 > 0)) throw ConfigError("train.lr0 must be > 0");
    if (plateau_epochs < 1) throw ConfigError("train.plateau_epochs must be >= 1");
    if (max_halvings < 0) throw ConfigError("train.max_halvings must be >= 0");
    if (epochs_max < 1) throw ConfigError("train.epochs_max must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (lambda < 0) throw ConfigError("train.lambda must be >= 0");
    if (p_on < 0 || p_off < 0 || p_on > 1 || p_off > 1)
      throw ConfigError("train.p_on and train.p_off must lie in [0,1]");
    if (p_on + p_off > 1.0 + 1e-12) throw ConfigError("train.p_on + train.p_off must be <= 1");
    if (max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
  }
};

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr0", c.lr0},
           {"plateau_epochs", c.plateau_epochs},
           {"max_halvings", c.max_halvings},
           {"epochs_max", c.epochs_max},
           {"batch_size", c.batch_size},
           {"lambda", c.lambda},
           {"p_on", c.p_on},
           {"p_off", c.p_off},
           {"muting", c.muting},
           {"seed", c.seed},
           {"clip_norm", c.clip_norm},
           {"frozen", c.frozen},
           {"max_steps", c.max_steps},
           {"target", c.target}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
  StrictReader r(j, "train");
  r.optional("lr0", c.lr0);
  r.optional("plateau_epochs", c.plateau_epochs);
  r.optional("max_halvings", c.max_halvings);
  r.optional("epochs_max", c.epochs_max);
  r.optional("batch_size", c.batch_size);
  r.optional("lambda", c.lambda);
  r.optional("p_on", c.p_on);
  r.optional("p_off", c.p_off);
  r.optional("muting", c.muting);
  r.optional("seed", c.seed);
  r.optional("clip_norm", c.clip_norm);
  r.optional("frozen", c.frozen);
  r.optional("max_steps", c.max_steps);
  r.optional("target", c.target);
  r.finish();
  c.validate();
  return c;
}

inline const Waveform& select_target(const MixtureSample& s, TargetKind k) {
  switch (k) {
    case TargetKind::on_screen: return s.on_screen;
    case TargetKind::off_screen: return s.off_screen;
    default: return s.target;
  }
}

inline bool has_energy(const Waveform& w) {
  for (float v : w.samples)
    if (v != 0.0f) return true;
  return false;
}

inline ModelInput model_input(const MixtureSample& s) {
  return ModelInput{s.mix.view(), &s.lips, s.enrollment.view()};
}

// Checks that a dataset was synthesised for this model's frame layout.
inline void check_compatible(const ModelConfig& m, const MixSpec& s) {
  if (m.window_len != s.frame_window || m.hop != s.frame_hop)
    throw ConfigError("dataset oracle labels use window/hop " + std::to_string(s.frame_window) +
                      "/" + std::to_string(s.frame_hop) + " but the model uses " +
                      std::to_string(m.window_len) + "/" + std::to_string(m.hop));
  if (m.sample_rate != s.sample_rate) throw ConfigError("dataset and model sample rates differ");
  if (m.lip_dim != s.lip_dim) throw ConfigError("dataset lip_dim differs from model.lip_dim");
  if (m.video_fps != s.video_fps) throw ConfigError("dataset and model video fps differ");
}

struct LossTerms {
  double total = 0.0;
  double separation = 0.0;
  double vad = 0.0;
};

// Objective for one sample: -SNR against the selected target, plus lambda
// times the block-averaged activity cross-entropy when attention is on.
// Accumulates weight * d(total)/d(params) into `grad` when given.
template <class T>
LossTerms sample_objective(const ModelParams<T>& p, const MixtureSample& s, TargetKind target,
                           double lambda, ModelParams<T>* grad, double weight = 1.0) {
  ForwardTrace<T> trace;
  const ForwardResult<T> res = forward(p, model_input(s), grad ? &trace : nullptr);
  auto finite = [](T v) { return std::isfinite(static_cast<double>(v)); };
  bool ok = std::all_of(res.estimate.begin(), res.estimate.end(), finite);
  for (const auto& a : res.attentions) ok = ok && a.unaryExpr(finite).all();
  if (!ok) throw NumericError("non-finite model output on sample " + s.meta.id);
  const Waveform& ref_wave = select_target(s, target);
  std::vector<T> ref(ref_wave.samples.begin(), ref_wave.samples.end());
  std::vector<T> d_est(res.estimate.size(), T(0));
  LossTerms out;
  out.separation = loss_on_plus_off_grad<T>(res.estimate, ref, d_est);
  std::vector<RowVec<T>> d_att;
  if (!res.attentions.empty()) {
    const std::vector<T> oracle(s.oracle_vad.values.begin(), s.oracle_vad.values.end());
    const double r_count = static_cast<double>(res.attentions.size());
    for (const auto& a : res.attentions) {
      std::span<const T> pred(a.data(), static_cast<std::size_t>(a.size()));
      RowVec<T> g(a.size());
      out.vad += vad_cross_entropy_grad<T>(pred, oracle,
                                           std::span<T>(g.data(), static_cast<std::size_t>(g.size())),
                                           weight * lambda / r_count) /
                 r_count;
      d_att.push_back(std::move(g));
    }
  }
  out.total = res.attentions.empty() ? out.separation : total_loss(out.separation, out.vad, lambda);
  if (grad) {
    for (auto& v : d_est) v *= static_cast<T>(weight);
    backward(p, trace, std::span<const T>(d_est), d_att, *grad);
  }
  return out;
}

struct EpochStats {
  double mean_loss = 0.0;
  std::int64_t steps = 0;
  std::size_t samples = 0;
  std::size_t skipped = 0;  // silent targets (undefined SNR loss)
  std::size_t muted_on = 0;
  std::size_t muted_off = 0;
};

// One shuffled pass over `data`. The rng drives ordering and muting draws.
// Stops early once `global_step` reaches cfg.max_steps.
inline EpochStats train_epoch(ModelParams<float>& params, Adam<float>& opt,
                              const Dataset& data, const TrainConfig& cfg, double lr, Rng& rng,
                              std::int64_t& global_step) {
  require(!data.samples.empty(), "training set is empty");
  std::vector<std::size_t> order(data.samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  EpochStats st;
  double loss_sum = 0.0;
  ModelParams<float> grad = params.zeros_like();
  for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
    if (cfg.max_steps > 0 && global_step >= cfg.max_steps) break;
    const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
    std::vector<MixtureSample> batch;
    for (std::size_t i = b; i < e; ++i) {
      const MixtureSample& src = data.samples[order[i]];
      const bool mute = cfg.muting && (cfg.p_on > 0 || cfg.p_off > 0);
      MixtureSample s = mute ? apply_muting(src, cfg.p_on, cfg.p_off, rng) : src;
      if (!has_energy(select_target(s, cfg.target))) s = src;
      if (!has_energy(select_target(s, cfg.target))) {
        ++st.skipped;
        continue;
      }
      st.muted_on += s.meta.mute == MuteFlag::on;
      st.muted_off += s.meta.mute == MuteFlag::off;
      batch.push_back(std::move(s));
    }
    if (batch.empty()) continue;
    for (auto& t : grad.tensors()) t.value->setZero();
    const double w = 1.0 / static_cast<double>(batch.size());
    for (const auto& s : batch) {
      const LossTerms l = sample_objective<float>(params, s, cfg.target, cfg.lambda, &grad, w);
      if (!std::isfinite(l.total))
        throw NumericError("non-finite loss on sample " + s.meta.id + " at step " +
                           std::to_string(global_step + 1));
      loss_sum += l.total;
      ++st.samples;
    }
    opt.step(params, grad, lr);
    ++global_step;
    ++st.steps;
  }
  st.mean_loss = st.samples ? loss_sum / static_cast<double>(st.samples) : 0.0;
  return st;
}

// ---------------------------------------------------------------------------
// Evaluation.

struct Estimate {
  std::vector<float> estimate;
  std::vector<RowVec<float>> attentions;
};

using Estimator = std::function<Estimate(const MixtureSample&)>;

struct SampleReport {
  std::string id;
  InterferenceMode mode = InterferenceMode::noise;
  double si_sdr = 0, sdr = 0, si_sdri = 0, sdri = 0;
  double loss = 0;
  std::optional<double> attention_accuracy;
};

struct ConditionSummary {
  std::size_t count = 0;
  double si_sdri = 0, sdri = 0;
};

struct EvalReport {
  std::string label;
  std::size_t count = 0;
  std::size_t skipped = 0;
  double si_sdri = 0, sdri = 0, si_sdr = 0, sdr = 0;
  double mean_loss = 0;
  std::optional<double> attention_accuracy;
  std::map<std::string, ConditionSummary> per_condition;
  std::vector<SampleReport> samples;
  json extra = json::object();
};

inline void to_json(json& j, const EvalReport& r) {
  json cond = json::object();
  for (const auto& [k, c] : r.per_condition)
    cond[k] = {{"count", c.count}, {"si_sdri_db", c.si_sdri}, {"sdri_db", c.sdri}};
  json samples = json::array();
  for (const auto& s : r.samples) {
    json e{{"id", s.id},
           {"condition", s.mode},
           {"si_sdr_db", s.si_sdr},
           {"sdr_db", s.sdr},
           {"si_sdri_db", s.si_sdri},
           {"sdri_db", s.sdri},
           {"loss", s.loss}};
    if (s.attention_accuracy) e["attention_accuracy"] = *s.attention_accuracy;
    samples.push_back(std::move(e));
  }
  j = json{{"label", r.label},
           {"count", r.count},
           {"skipped", r.skipped},
           {"si_sdri_db", r.si_sdri},
           {"sdri_db", r.sdri},
           {"si_sdr_db", r.si_sdr},
           {"sdr_db", r.sdr},
           {"mean_loss", r.mean_loss},
           {"attention_accuracy",
            r.attention_accuracy ? json(*r.attention_accuracy) : json(nullptr)},
           {"per_condition", cond},
           {"samples", samples},
           {"extra", r.extra}};
}

// Fraction of frames where (a > 0.5) agrees with the oracle label.
inline double attention_accuracy(const RowVec<float>& a, const VadSequence& oracle) {
  require(static_cast<std::size_t>(a.size()) == oracle.size(),
          "attention and oracle differ in length");
  std::size_t hit = 0;
  for (Eigen::Index t = 0; t < a.size(); ++t)
    hit += (a(t) > 0.5f) == (oracle.values[static_cast<std::size_t>(t)] > 0.5f);
  return static_cast<double>(hit) / static_cast<double>(a.size());
}

// Scores estimates against `target` (default: the on+off mixture). Samples
// whose reference is silent are counted as skipped. No muting is applied.
inline EvalReport evaluate_estimates(const Dataset& data, const Estimator& estimator,
                                     TargetKind target = TargetKind::mixture,
                                     double lambda = 1.0) {
  require(!data.samples.empty(), "evaluation set is empty");
  EvalReport rep;
  double att_sum = 0.0;
  std::size_t att_n = 0;
  for (const auto& s : data.samples) {
    const Waveform& ref = select_target(s, target);
    if (!has_energy(ref)) {
      ++rep.skipped;
      continue;
    }
    const Estimate e = estimator(s);
    require(e.estimate.size() == ref.size(), "estimate length differs from the reference");
    SampleReport sr;
    sr.id = s.meta.id;
    sr.mode = s.meta.mode;
    const std::span<const float> est(e.estimate);
    sr.si_sdr = si_sdr_db(est, ref.view());
    sr.sdr = snr_db(est, ref.view());
    sr.si_sdri = sr.si_sdr - si_sdr_db(s.mix.view(), ref.view());
    sr.sdri = sr.sdr - snr_db(s.mix.view(), ref.view());
    sr.loss = -sr.sdr;
    if (!e.attentions.empty()) {
      double ce = 0.0;
      for (const auto& a : e.attentions)
        ce += vad_cross_entropy(std::span<const float>(a.data(), static_cast<std::size_t>(a.size())),
                                std::span<const float>(s.oracle_vad.values));
      sr.loss = total_loss(sr.loss, ce / static_cast<double>(e.attentions.size()), lambda);
      sr.attention_accuracy = attention_accuracy(e.attentions.back(), s.oracle_vad);
      att_sum += *sr.attention_accuracy;
      ++att_n;
    }
    rep.si_sdr += sr.si_sdr;
    rep.sdr += sr.sdr;
    rep.si_sdri += sr.si_sdri;
    rep.sdri += sr.sdri;
    rep.mean_loss += sr.loss;
    auto& c = rep.per_condition[mode_name(sr.mode)];
    ++c.count;
    c.si_sdri += sr.si_sdri;
    c.sdri += sr.sdri;
    rep.samples.push_back(std::move(sr));
  }
  rep.count = rep.samples.size();
  if (rep.count) {
    const double n = static_cast<double>(rep.count);
    rep.si_sdr /= n;
    rep.sdr /= n;
    rep.si_sdri /= n;
    rep.sdri /= n;
    rep.mean_loss /= n;
  }
  for (auto& [k, c] : rep.per_condition) {
    c.si_sdri /= static_cast<double>(c.count);
    c.sdri /= static_cast<double>(c.count);
  }
  if (att_n) rep.attention_accuracy = att_sum / static_cast<double>(att_n);
  return rep;
}

inline Estimator model_estimator(const ModelParams<float>& p) {
  return [&p](const MixtureSample& s) {
    ForwardResult<float> r = forward(p, model_input(s));
    return Estimate{std::move(r.estimate), std::move(r.attentions)};
  };
}

// Returns the unprocessed mixture; every improvement is zero.
inline Estimator null_estimator() {
  return [](const MixtureSample& s) { return Estimate{s.mix.samples, {}}; };
}

inline EvalReport evaluate(const Model<float>& model, const Dataset& data,
                           TargetKind target = TargetKind::mixture, double lambda = 1.0) {
  check_compatible(model.config(), data.spec);
  EvalReport r = evaluate_estimates(data, model_estimator(model.params()), target, lambda);
  r.extra["parameters"] = model.count_parameters();
  return r;
}

// ---------------------------------------------------------------------------
// Run directories.

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_si_sdri = 0;
  double val_sdri = 0;
  std::optional<double> val_attention_accuracy;
  std::int64_t steps = 0;
};

inline std::string metrics_csv_header() {
  return "epoch,lr,train_loss,val_loss,val_si_sdri_db,val_sdri_db,val_attention_accuracy,steps\n";
}

inline std::string metrics_csv_row(const EpochRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%s,%lld\n", r.epoch, r.lr,
                r.train_loss, r.val_loss, r.val_si_sdri, r.val_sdri,
                r.val_attention_accuracy
                    ? std::to_string(*r.val_attention_accuracy).c_str()
                    : "",
                static_cast<long long>(r.steps));
  return buf;
}

struct FitOptions {
  std::string run_dir;                        // empty: nothing written
  std::optional<std::string> init_checkpoint;  // weights only; fresh optimizer and schedule
  bool resume = false;                        // continue from run_dir/last.ckpt if present
  json config_snapshot = json::object();
  std::uint64_t init_seed = 0;  // 0: derived from train.seed
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
  ModelParams<float> best;
  ModelParams<float> last;
  int epochs_run = 0;
  int best_epoch = 0;
  std::int64_t steps = 0;
  ScheduleState schedule;
  std::vector<EpochRecord> history;
  EvalReport best_val;
  json report;
};

namespace detail {

inline Checkpoint make_checkpoint(const ModelParams<float>& p, const Adam<float>& opt,
                                  const ScheduleState& sched, int epoch, std::int64_t step,
                                  const Rng& rng, const TrainConfig& cfg) {
  Checkpoint ck;
  ck.params = p;
  ck.optimizer = opt;
  ck.schedule = sched;
  ck.epoch = epoch;
  ck.global_step = step;
  ck.rng_state = rng_to_string(rng);
  ck.extra = {{"train", cfg}};
  return ck;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace detail

// Trains until the schedule stops, epochs_max is reached or max_steps is
// spent. Writes config.json, metrics.csv, best.ckpt, last.ckpt and
// report.json into opts.run_dir.
inline FitResult fit(const ModelConfig& model_cfg, const TrainConfig& cfg, const Dataset& train,
                     const Dataset& val, const FitOptions& opts = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  model_cfg.validate();
  check_compatible(model_cfg, train.spec);
  check_compatible(model_cfg, val.spec);
  const bool write = !opts.run_dir.empty();
  const fs::path dir(opts.run_dir);
  if (write) fs::create_directories(dir);

  FitResult res;
  ModelParams<float> params =
      init_params<float>(model_cfg, opts.init_seed ? opts.init_seed : mix64(cfg.seed));
  Adam<float> opt(params, cfg.adam(), cfg.frozen);
  ScheduleState sched = ScheduleState::initial(cfg.schedule());
  Rng rng = derive_rng(cfg.seed, 0x747261696eULL);
  int start_epoch = 0;
  std::string csv = metrics_csv_header();

  if (opts.init_checkpoint) {
    Checkpoint ck = load_checkpoint(*opts.init_checkpoint);
    auto dst = params.tensors();
    auto src = ck.params.tensors();
    if (dst.size() != src.size()) throw ConfigError("initial checkpoint has a different model");
    for (std::size_t k = 0; k < dst.size(); ++k) {
      if (dst[k].name != src[k].name || dst[k].value->rows() != src[k].value->rows() ||
          dst[k].value->cols() != src[k].value->cols())
        throw ConfigError("initial checkpoint tensor " + src[k].name + " does not fit the model");
      *dst[k].value = *src[k].value;
    }
  }
  res.best = params;
  if (write && opts.resume && fs::exists(dir / "last.ckpt")) {
    Checkpoint ck = load_checkpoint((dir / "last.ckpt").string());
    params = ck.params;
    if (ck.optimizer) opt = *ck.optimizer;
    sched = ck.schedule;
    start_epoch = ck.epoch;
    res.steps = ck.global_step;
    rng = rng_from_string(ck.rng_state);
    if (fs::exists(dir / "best.ckpt")) res.best = load_checkpoint((dir / "best.ckpt").string()).params;
    // Keep the metrics rows up to the resumed epoch.
    std::istringstream old(detail::read_text((dir / "metrics.csv").string()));
    std::string line;
    std::getline(old, line);
    while (std::getline(old, line)) {
      if (line.empty() || std::stoi(line) > start_epoch) break;
      csv += line + "\n";
    }
  }

  if (write) {
    json snap = opts.config_snapshot;
    snap["model"] = model_cfg;
    snap["train"] = cfg;
    write_json_file((dir / "config.json").string(), snap);
  }

  for (int epoch = start_epoch + 1; epoch <= cfg.epochs_max && !sched.stopped; ++epoch) {
    if (cfg.max_steps > 0 && res.steps >= cfg.max_steps) break;
    const double lr = sched.current_lr;
    const EpochStats st = train_epoch(params, opt, train, cfg, lr, rng, res.steps);
    const EvalReport vr = evaluate_estimates(val, model_estimator(params), cfg.target, cfg.lambda);
    if (!std::isfinite(vr.mean_loss))
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    const bool improved = vr.mean_loss < sched.best_val_loss;
    sched = lr_schedule_step(sched, vr.mean_loss, cfg.schedule());

    EpochRecord rec{epoch, lr, st.mean_loss, vr.mean_loss, vr.si_sdri, vr.sdri,
                    vr.attention_accuracy, res.steps};
    res.history.push_back(rec);
    csv += metrics_csv_row(rec);
    if (improved) {
      res.best = params;
      res.best_epoch = epoch;
      res.best_val = vr;
    }
    if (write) {
      const Checkpoint ck =
          detail::make_checkpoint(params, opt, sched, epoch, res.steps, rng, cfg);
      if (improved) save_checkpoint((dir / "best.ckpt").string(), ck);
      save_checkpoint((dir / "last.ckpt").string(), ck);
      write_text_file((dir / "metrics.csv").string(), csv);
    }
    res.epochs_run = epoch;
    if (opts.on_epoch) opts.on_epoch(rec);
  }
  res.last = params;
  res.schedule = sched;
  if (res.best_epoch == 0 && start_epoch > 0 && write) {
    // Resumed run that did not improve further: the best epoch is on disk.
    const Checkpoint best = load_checkpoint((dir / "best.ckpt").string());
    res.best_epoch = best.epoch;
    res.best_val =
        evaluate_estimates(val, model_estimator(res.best), cfg.target, cfg.lambda);
  }

  res.report = {{"model", model_cfg},
                {"train", cfg},
                {"epochs_run", res.epochs_run},
                {"best_epoch", res.best_epoch},
                {"steps", res.steps},
                {"schedule", sched},
                {"stopped_early", sched.stopped},
                {"parameters", count_parameters(res.best)},
                {"best_validation", res.best_val}};
  if (write) write_json_file((dir / "report.json").string(), res.report);
  return res;
}

// ---------------------------------------------------------------------------
// Muting grid search.

struct GridCell {
  double p_on = 0, p_off = 0;
  bool valid = false;
  std::optional<double> si_sdri, sdri;
};

struct GridReport {
  std::vector<GridCell> cells;
  std::string to_csv() const {
    std::string out = "p_on,p_off,valid,si_sdri_db,sdri_db\n";
    char buf[256];
    for (const auto& c : cells) {
      std::snprintf(buf, sizeof buf, "%.6g,%.6g,%d,%s,%s\n", c.p_on, c.p_off, c.valid ? 1 : 0,
                    c.si_sdri ? std::to_string(*c.si_sdri).c_str() : "invalid",
                    c.sdri ? std::to_string(*c.sdri).c_str() : "invalid");
      out += buf;
    }
    return out;
  }
};

// One model per valid (p_on, p_off) pair, all sharing data and seed; scored
// on `test`. Pairs with p_on + p_off > 1 are marked invalid and not trained.
inline GridReport grid_search_muting(const std::vector<double>& p_on_values,
                                     const std::vector<double>& p_off_values,
                                     const ModelConfig& model_cfg, const TrainConfig& base,
                                     const Dataset& train, const Dataset& val,
                                     const Dataset& test, const std::string& run_root = "") {
  GridReport g;
  for (double on : p_on_values) {
    for (double off : p_off_values) {
      GridCell c;
      c.p_on = on;
      c.p_off = off;
      c.valid = on >= 0 && off >= 0 && on + off <= 1.0 + 1e-12;
      if (c.valid) {
        TrainConfig cfg = base;
        cfg.p_on = on;
        cfg.p_off = off;
        cfg.muting = true;
        FitOptions fo;
        if (!run_root.empty()) {
          char name[64];
          std::snprintf(name, sizeof name, "pon%.3g_poff%.3g", on, off);
          fo.run_dir = (std::filesystem::path(run_root) / name).string();
        }
        FitResult fr = fit(model_cfg, cfg, train, val, fo);
        const EvalReport r = evaluate_estimates(test, model_estimator(fr.best));
        c.si_sdri = r.si_sdri;
        c.sdri = r.sdri;
      }
      g.cells.push_back(c);
    }
  }
  if (!run_root.empty()) {
    std::filesystem::create_directories(run_root);
    write_text_file((std::filesystem::path(run_root) / "grid.csv").string(), g.to_csv());
  }
  return g;
}

}  // namespace avse
