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


// Plateau-halving learning-rate schedule with early stopping.

#pragma once

#include <cmath>
#include <limits>

#include "avse/json_util.hpp"

namespace avse {

struct ScheduleConfig {
  double lr0 = 0.001;
  int plateau_epochs = 3;
  int max_halvings = 4;
};

struct ScheduleState {
  double current_lr = 0.001;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int epochs_since_improve = 0;
  int halvings_done = 0;
  bool stopped = false;

  static ScheduleState initial(const ScheduleConfig& cfg) {
    ScheduleState s;
    s.current_lr = cfg.lr0;
    return s;
  }

  bool operator==(const ScheduleState&) const = default;
};

// An epoch improves only on a strict decrease. After `plateau_epochs` stale
// epochs the rate halves; a halving due once `max_halvings` are spent stops
// training instead.
inline ScheduleState lr_schedule_step(ScheduleState s, double val_loss,
                                      const ScheduleConfig& cfg) {
  if (s.stopped) return s;
  if (val_loss < s.best_val_loss) {
    s.best_val_loss = val_loss;
    s.epochs_since_improve = 0;
    return s;
  }
  if (++s.epochs_since_improve < cfg.plateau_epochs) return s;
  s.epochs_since_improve = 0;
  if (s.halvings_done >= cfg.max_halvings) {
    s.stopped = true;
  } else {
    s.current_lr *= 0.5;
    ++s.halvings_done;
  }
  return s;
}

inline void to_json(json& j, const ScheduleState& s) {
  j = json{{"current_lr", s.current_lr},
           {"best_val_loss",
            std::isfinite(s.best_val_loss) ? json(s.best_val_loss) : json(nullptr)},
           {"epochs_since_improve", s.epochs_since_improve},
           {"halvings_done", s.halvings_done},
           {"stopped", s.stopped}};
}

inline void from_json(const json& j, ScheduleState& s) {
  s.current_lr = j.at("current_lr").get<double>();
  s.best_val_loss = j.at("best_val_loss").is_null()
                        ? std::numeric_limits<double>::infinity()
                        : j.at("best_val_loss").get<double>();
  s.epochs_since_improve = j.at("epochs_since_improve").get<int>();
  s.halvings_done = j.at("halvings_done").get<int>();
  s.stopped = j.at("stopped").get<bool>();
}

}  // namespace avse
