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


// Versioned binary checkpoints.
//
// Layout: "AVSECKPT" | uint32 version | uint64 header length | JSON header |
// raw little-endian float32 tensors in header order. The header carries the
// model config, the tensor table, optimizer hyperparameters, schedule state,
// the epoch counter and the serialized RNG state.

#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "avse/model.hpp"
#include "avse/optim.hpp"
#include "avse/schedule.hpp"

namespace avse {

inline constexpr char kCheckpointMagic[8] = {'A', 'V', 'S', 'E', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams<float> params;
  std::optional<Adam<float>> optimizer;
  ScheduleState schedule;
  int epoch = 0;
  std::int64_t global_step = 0;
  std::string rng_state;  // operator<< text of the training Rng
  json extra = json::object();
};

namespace detail {

inline void append_tensors(const nn::TensorList<float>& list, const std::string& prefix,
                           json& table, std::vector<const Mat<float>*>& blobs,
                           std::uint64_t& offset) {
  for (const auto& t : list) {
    table.push_back({{"name", prefix + t.name},
                     {"rows", t.value->rows()},
                     {"cols", t.value->cols()},
                     {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.value->size()) * sizeof(float);
    blobs.push_back(t.value);
  }
}

}  // namespace detail

// Written to a temporary file first and renamed, so an interrupted save never
// leaves a truncated checkpoint behind.
inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  json header;
  header["model"] = ck.params.config;
  header["epoch"] = ck.epoch;
  header["global_step"] = ck.global_step;
  header["schedule"] = ck.schedule;
  header["rng_state"] = ck.rng_state;
  header["extra"] = ck.extra;
  json table = json::array();
  std::vector<const Mat<float>*> blobs;
  std::uint64_t offset = 0;
  detail::append_tensors(ck.params.tensors(), "param/", table, blobs, offset);
  if (ck.optimizer) {
    const auto& opt = *ck.optimizer;
    header["adam"] = {{"beta1", opt.config().beta1},
                      {"beta2", opt.config().beta2},
                      {"eps", opt.config().eps},
                      {"clip_norm", opt.config().clip_norm},
                      {"frozen", opt.frozen()},
                      {"steps", opt.steps()}};
    detail::append_tensors(opt.first_moment().tensors(), "adam.m/", table, blobs, offset);
    detail::append_tensors(opt.second_moment().tensors(), "adam.v/", table, blobs, offset);
  }
  header["tensors"] = std::move(table);
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(kCheckpointMagic, 8);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* m : blobs)
      out.write(reinterpret_cast<const char*>(m->data()),
                static_cast<std::streamsize>(m->size() * sizeof(float)));
    if (!out) throw DataError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint not found: " + path);
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&len), 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError(path + ": not a checkpoint");
  if (version != kCheckpointVersion)
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const std::streamoff base = in.tellg();
  if (!in) throw DataError(path + ": truncated header");

  Checkpoint ck;
  try {
    const json header = json::parse(text);
    const ModelConfig cfg = model_config_from_json(header.at("model"));
    ck.params = init_params<float>(cfg, 0);
    ck.epoch = header.at("epoch").get<int>();
    ck.global_step = header.at("global_step").get<std::int64_t>();
    ck.schedule = header.at("schedule").get<ScheduleState>();
    ck.rng_state = header.at("rng_state").get<std::string>();
    ck.extra = header.at("extra");
    if (header.contains("adam")) {
      const json& a = header.at("adam");
      AdamConfig ac;
      ac.beta1 = a.at("beta1").get<double>();
      ac.beta2 = a.at("beta2").get<double>();
      ac.eps = a.at("eps").get<double>();
      ac.clip_norm = a.at("clip_norm").get<double>();
      ck.optimizer.emplace(ck.params, ac, a.at("frozen").get<std::vector<std::string>>());
      ck.optimizer->set_steps(a.at("steps").get<std::int64_t>());
    }
    std::map<std::string, Mat<float>*> slots;
    for (auto& t : ck.params.tensors()) slots["param/" + t.name] = t.value;
    if (ck.optimizer) {
      for (auto& t : ck.optimizer->first_moment().tensors()) slots["adam.m/" + t.name] = t.value;
      for (auto& t : ck.optimizer->second_moment().tensors()) slots["adam.v/" + t.name] = t.value;
    }
    std::size_t filled = 0;
    for (const auto& t : header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      auto it = slots.find(name);
      if (it == slots.end()) throw DataError(path + ": unexpected tensor " + name);
      Mat<float>& m = *it->second;
      if (t.at("rows").get<Eigen::Index>() != m.rows() ||
          t.at("cols").get<Eigen::Index>() != m.cols())
        throw DataError(path + ": shape mismatch for " + name);
      in.seekg(base + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
      in.read(reinterpret_cast<char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(float)));
      if (!in) throw DataError(path + ": truncated tensor data for " + name);
      ++filled;
    }
    if (filled != slots.size()) throw DataError(path + ": missing tensors");
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(path + ": " + e.what());
  }
  return ck;
}

inline std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng rng_from_string(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw DataError("corrupt RNG state");
  return rng;
}

}  // namespace avse
