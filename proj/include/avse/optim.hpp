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


// Adam with global-norm gradient clipping and frozen-parameter support.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "avse/model.hpp"

namespace avse {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
};

inline bool is_frozen(const std::string& name, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes)
    if (name.compare(0, p.size(), p) == 0) return true;
  return false;
}

template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(const ModelParams<T>& like, AdamConfig cfg, std::vector<std::string> frozen = {})
      : cfg_(cfg), frozen_(std::move(frozen)), m_(like.zeros_like()), v_(like.zeros_like()) {}

  // Returns the gradient norm before clipping. Frozen tensors are untouched
  // and excluded from the norm.
  double step(ModelParams<T>& params, const ModelParams<T>& grad, double lr) {
    auto p = params.tensors();
    auto g = grad.tensors();
    auto m = m_.tensors();
    auto v = v_.tensors();
    require(p.size() == g.size() && p.size() == m.size(),
            "optimizer state does not match the model");
    double sq = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k)
      if (!is_frozen(p[k].name, frozen_))
        sq += g[k].value->template cast<double>().squaredNorm();
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
    const double scale = cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(cfg_.eps);
    const T s = static_cast<T>(scale);
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (is_frozen(p[k].name, frozen_)) continue;
      auto gk = (g[k].value->array() * s).eval();
      auto& mk = *m[k].value;
      auto& vk = *v[k].value;
      mk = (b1 * mk.array() + (T(1) - b1) * gk).matrix();
      vk = (b2 * vk.array() + (T(1) - b2) * gk.square()).matrix();
      p[k].value->array() -= step * mk.array() / ((vk.array() * inv_bc2).sqrt() + eps);
    }
    return norm;
  }

  const AdamConfig& config() const { return cfg_; }
  const std::vector<std::string>& frozen() const { return frozen_; }
  std::int64_t steps() const { return t_; }
  ModelParams<T>& first_moment() { return m_; }
  ModelParams<T>& second_moment() { return v_; }
  const ModelParams<T>& first_moment() const { return m_; }
  const ModelParams<T>& second_moment() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::vector<std::string> frozen_;
  ModelParams<T> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace avse
