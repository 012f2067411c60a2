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

// Separation losses and evaluation metrics. All values in dB are clamped to
// [-60, +60] so perfect or degenerate estimates stay finite.

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "avse/core.hpp"

namespace avse {

inline constexpr double kDbFloor = -60.0;
inline constexpr double kDbCeil = 60.0;
inline constexpr double kVadClamp = 1e-7;

enum class VadKind { oracle, predicted };

struct VadSequence {
  std::vector<float> values;
  VadKind kind = VadKind::predicted;

  std::size_t size() const { return values.size(); }

  void validate() const {
    for (float v : values) {
      if (kind == VadKind::oracle)
        require(v == 0.0f || v == 1.0f, "oracle VAD must be binary");
      else
        require(v >= 0.0f && v <= 1.0f, "predicted VAD must lie in [0,1]");
    }
  }
};

namespace detail {

inline double clamp_db(double v) { return std::clamp(v, kDbFloor, kDbCeil); }

template <class T>
void check_pair(std::span<const T> est, std::span<const T> ref) {
  require(est.size() == ref.size(), "metric inputs differ in length (" +
                                        std::to_string(est.size()) + " vs " +
                                        std::to_string(ref.size()) + ")");
  require(!ref.empty(), "metric inputs are empty");
}

template <class T>
double energy(std::span<const T> x) {
  double acc = 0.0;
  for (T v : x) acc += static_cast<double>(v) * static_cast<double>(v);
  return acc;
}

struct SnrTerms {
  double signal = 0.0;
  double error = 0.0;
  double eps = 0.0;
  double raw_db = 0.0;
};

template <class T>
SnrTerms snr_terms(std::span<const T> est, std::span<const T> ref) {
  check_pair(est, ref);
  SnrTerms t;
  t.signal = energy(ref);
  require(t.signal > 0.0, "reference signal is all-zero");
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = static_cast<double>(est[i]) - static_cast<double>(ref[i]);
    t.error += d * d;
  }
  t.eps = 1e-10 * t.signal;
  t.raw_db = 10.0 * std::log10(t.signal / std::max(t.error, t.eps));
  return t;
}

}  // namespace detail

// Scale-dependent SNR: 10 log10(|s|^2 / max(|s_hat - s|^2, eps)). The floor
// only binds far above the +60 dB clamp, so 2s scores exactly 0 dB.
template <class T>
double snr_db(std::span<const T> est, std::span<const T> ref) {
  return detail::clamp_db(detail::snr_terms(est, ref).raw_db);
}

inline double snr_db(const Waveform& est, const Waveform& ref) {
  return snr_db(est.view(), ref.view());
}

template <class T>
double loss_on_plus_off(std::span<const T> est, std::span<const T> ref) {
  return -snr_db(est, ref);
}

inline double loss_on_plus_off(const Waveform& est, const Waveform& ref) {
  return -snr_db(est, ref);
}

// Writes d(-snr_db)/d(est) into grad and returns the loss. The gradient is
// zero wherever the dB clamp is active.
template <class T>
double loss_on_plus_off_grad(std::span<const T> est, std::span<const T> ref,
                             std::span<T> grad) {
  require(grad.size() == est.size(), "gradient buffer has wrong length");
  const auto t = detail::snr_terms(est, ref);
  const bool clamped = t.raw_db <= kDbFloor || t.raw_db >= kDbCeil;
  const double scale =
      clamped ? 0.0 : 20.0 / (std::numbers::ln10 * t.error);
  for (std::size_t i = 0; i < est.size(); ++i)
    grad[i] = static_cast<T>(
        scale * (static_cast<double>(est[i]) - static_cast<double>(ref[i])));
  return -detail::clamp_db(t.raw_db);
}

// Scale-invariant SDR: project est onto ref and compare target vs residual.
template <class T>
double si_sdr_db(std::span<const T> est, std::span<const T> ref) {
  detail::check_pair(est, ref);
  const double ref_energy = detail::energy(ref);
  require(ref_energy > 0.0, "reference signal is all-zero");
  double dot = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i)
    dot += static_cast<double>(est[i]) * static_cast<double>(ref[i]);
  const double alpha = dot / ref_energy;
  double target = 0.0;
  double residual = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double p = alpha * static_cast<double>(ref[i]);
    const double r = static_cast<double>(est[i]) - p;
    target += p * p;
    residual += r * r;
  }
  if (target <= 0.0) return kDbFloor;
  if (residual <= 0.0) return kDbCeil;
  return detail::clamp_db(10.0 * std::log10(target / residual));
}

inline double si_sdr_db(const Waveform& est, const Waveform& ref) {
  return si_sdr_db(est.view(), ref.view());
}

// SDR here is the scale-dependent SNR above, not the BSS-Eval filtered SDR.
enum class Metric { snr, si_sdr };

inline std::string metric_name(Metric m) {
  return m == Metric::snr ? "SDR" : "SI-SDR";
}

template <class T>
double evaluate_metric(Metric m, std::span<const T> est,
                       std::span<const T> ref) {
  return m == Metric::snr ? snr_db(est, ref) : si_sdr_db(est, ref);
}

template <class T>
double improvement(Metric m, std::span<const T> est, std::span<const T> mix,
                   std::span<const T> ref) {
  require(mix.size() == ref.size(), "mixture and reference differ in length");
  return evaluate_metric(m, est, ref) - evaluate_metric(m, mix, ref);
}

inline double improvement(Metric m, const Waveform& est, const Waveform& mix,
                          const Waveform& ref) {
  return improvement(m, est.view(), mix.view(), ref.view());
}

namespace detail {

template <class T>
void check_vad(std::span<const T> pred, std::span<const T> oracle) {
  require(pred.size() == oracle.size(),
          "VAD sequences differ in length (" + std::to_string(pred.size()) +
              " vs " + std::to_string(oracle.size()) + ")");
  require(!pred.empty(), "VAD sequences are empty");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    require(oracle[i] == T(0) || oracle[i] == T(1), "oracle VAD must be binary");
    require(pred[i] >= T(0) && pred[i] <= T(1),
            "predicted VAD must lie in [0,1]");
  }
}

}  // namespace detail

// Mean binary cross-entropy over frames; predictions are clamped to
// [1e-7, 1 - 1e-7] before taking logs.
template <class T>
double vad_cross_entropy(std::span<const T> pred, std::span<const T> oracle) {
  detail::check_vad(pred, oracle);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a =
        std::clamp(static_cast<double>(pred[i]), kVadClamp, 1.0 - kVadClamp);
    const double v = static_cast<double>(oracle[i]);
    acc -= v * std::log(a) + (1.0 - v) * std::log(1.0 - a);
  }
  return acc / static_cast<double>(pred.size());
}

inline double vad_cross_entropy(const VadSequence& pred,
                                const VadSequence& oracle) {
  require(pred.kind == VadKind::predicted && oracle.kind == VadKind::oracle,
          "vad_cross_entropy expects (predicted, oracle)");
  return vad_cross_entropy(std::span<const float>(pred.values),
                           std::span<const float>(oracle.values));
}

// d(vad_cross_entropy)/d(pred), scaled by `weight`. Zero where clamping binds.
template <class T>
double vad_cross_entropy_grad(std::span<const T> pred,
                              std::span<const T> oracle, std::span<T> grad,
                              double weight = 1.0) {
  require(grad.size() == pred.size(), "gradient buffer has wrong length");
  const double loss = vad_cross_entropy(pred, oracle);
  const double n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = static_cast<double>(pred[i]);
    const double v = static_cast<double>(oracle[i]);
    if (a <= kVadClamp || a >= 1.0 - kVadClamp) {
      grad[i] = T(0);
      continue;
    }
    grad[i] = static_cast<T>(weight * (-v / a + (1.0 - v) / (1.0 - a)) / n);
  }
  return loss;
}

inline double total_loss(double l_sep, double l_ce, double lambda) {
  require(lambda >= 0.0, "lambda must be non-negative");
  return l_sep + lambda * l_ce;
}

}  // namespace avse
