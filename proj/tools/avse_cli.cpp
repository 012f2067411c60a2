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


// avse: dataset synthesis, training, evaluation, baseline comparison and
// the muting grid search.
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "avse/baseline.hpp"
#include "avse/run_config.hpp"
#include "avse/training.hpp"

namespace fs = std::filesystem;
using namespace avse;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string workdir = ".";

std::string resolve(const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? p : (fs::path(workdir) / path).string();
}

std::unique_ptr<SourceBank> make_bank(const RunConfig& cfg, Split split,
                                      const std::vector<SourceClip>* corpus) {
  if (corpus) return std::make_unique<CorpusBank>(*corpus, split);
  return std::make_unique<SyntheticBank>(split, cfg.mix.lip_dim, cfg.mix.video_fps,
                                         cfg.mix.sample_rate);
}

Dataset load_split(const std::string& data_dir, Split split) {
  const fs::path dir = fs::path(resolve(data_dir)) / split_name(split);
  if (!fs::exists(dir / "index.json"))
    throw DataError("no " + split_name(split) + " split under " + resolve(data_dir) +
                    " (run `avse synth` first)");
  return read_dataset(dir.string());
}

int cmd_synth(const std::string& config_path, const std::string& out_override, bool full_scale) {
  RunConfig cfg = load_run_config(resolve(config_path));
  if (full_scale) {
    std::cerr << "warning: --full-scale generates 20000/5000/3000 samples; this takes hours "
                 "and tens of gigabytes\n";
    cfg.splits = SplitSizes::full_scale();
  }
  const std::string out = resolve(out_override.empty() ? cfg.data_dir : out_override);
  std::vector<SourceClip> corpus;
  if (cfg.corpus_manifest) corpus = load_corpus(resolve(*cfg.corpus_manifest), cfg.mix.sample_rate);
  const std::vector<SourceClip>* corpus_ptr = cfg.corpus_manifest ? &corpus : nullptr;

  const std::pair<Split, int> plan[] = {{Split::train, cfg.splits.train},
                                        {Split::val, cfg.splits.val},
                                        {Split::test, cfg.splits.test}};
  json summary{{"config", to_json_value(cfg)}, {"source", corpus_ptr ? "corpus" : "synthetic"}};
  for (const auto& [split, count] : plan) {
    auto bank = make_bank(cfg, split, corpus_ptr);
    const auto samples = generate_split(*bank, cfg.mix, split, static_cast<std::size_t>(count));
    write_dataset((fs::path(out) / split_name(split)).string(), samples, cfg.mix, split);
    auto spk = bank->speakers();
    summary["splits"][split_name(split)] = {{"count", count}, {"speaker_pool_size", spk.size()}};
    std::cout << split_name(split) << ": " << count << " samples\n";
  }
  write_json_file((fs::path(out) / "dataset.json").string(), summary);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, bool no_attention, bool no_muting,
              const std::string& baseline, const std::string& resume_reinit, bool resume,
              const std::string& run_override) {
  RunConfig cfg = load_run_config(resolve(config_path));
  ModelConfig mc = cfg.model;
  TrainConfig tc = cfg.train;
  if (no_attention) mc.use_attention = false;
  if (no_muting) tc.muting = false;
  if (baseline == "visual" || baseline == "voiceprint") {
    const ClueMode kind = baseline == "visual" ? ClueMode::visual : ClueMode::voiceprint;
    mc = single_clue_config(kind, mc);
    tc = single_clue_train_config(kind, tc);
  } else if (!baseline.empty()) {
    throw ConfigError("--baseline must be visual or voiceprint");
  }
  const Dataset train = load_split(cfg.data_dir, Split::train);
  const Dataset val = load_split(cfg.data_dir, Split::val);
  FitOptions fo;
  fo.run_dir = resolve(run_override.empty() ? cfg.run_dir : run_override);
  fo.resume = resume;
  if (!resume_reinit.empty()) fo.init_checkpoint = resolve(resume_reinit);
  fo.config_snapshot = to_json_value(cfg);
  fo.config_snapshot["flags"] = {{"no_attention", no_attention},
                                 {"no_muting", no_muting},
                                 {"baseline", baseline},
                                 {"resume_reinit", resume_reinit}};
  fo.on_epoch = [](const EpochRecord& r) {
    std::printf("epoch %3d  lr %.3g  train %.4f  val %.4f  SI-SDRi %.3f dB\n", r.epoch, r.lr,
                r.train_loss, r.val_loss, r.val_si_sdri);
    std::fflush(stdout);
  };
  const FitResult res = fit(mc, tc, train, val, fo);
  std::cout << "best epoch " << res.best_epoch << " of " << res.epochs_run << "; run directory "
            << fo.run_dir << "\n";
  return 0;
}

Model<float> load_best(const std::string& run_dir) {
  const fs::path p = fs::path(resolve(run_dir)) / "best.ckpt";
  if (!fs::exists(p)) throw DataError("checkpoint missing: " + p.string());
  return Model<float>(load_checkpoint(p.string()).params);
}

TargetKind run_target(const std::string& run_dir) {
  const json snap = read_json_file((fs::path(resolve(run_dir)) / "config.json").string());
  return snap.at("train").at("target").get<TargetKind>();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

void print_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::set<std::string> conds;
  for (const auto& [_, r] : rows)
    for (const auto& [k, __] : r.per_condition) conds.insert(k);
  std::printf("%-12s %12s", "method", "params");
  for (const auto& c : conds) std::printf(" %14s", (c + " SI-SDRi").c_str());
  std::printf(" %10s %10s %8s\n", "SI-SDRi", "SDRi", "att.acc");
  for (const auto& [name, r] : rows) {
    std::string params = "-";
    if (r.extra.contains("parameters")) {
      const json& p = r.extra["parameters"];
      params = std::to_string(p.contains("total") ? p["total"].get<std::size_t>() : 0);
    }
    std::printf("%-12s %12s", name.c_str(), params.c_str());
    for (const auto& c : conds) {
      auto it = r.per_condition.find(c);
      std::printf(" %14s", it == r.per_condition.end() ? "-" : fmt(it->second.si_sdri).c_str());
    }
    std::printf(" %10s %10s %8s\n", fmt(r.si_sdri).c_str(), fmt(r.sdri).c_str(),
                r.attention_accuracy ? fmt(*r.attention_accuracy).c_str() : "-");
  }
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "'");
}

int cmd_eval(const std::string& run_dir, const std::string& data_dir, const std::string& split,
             bool as_json, bool null_model) {
  const Dataset data = load_split(data_dir, parse_split(split));
  EvalReport rep;
  if (null_model) {
    rep = evaluate_estimates(data, null_estimator());
    rep.label = "null";
  } else {
    const Model<float> model = load_best(run_dir);
    rep = evaluate(model, data, run_target(run_dir));
    rep.label = fs::path(resolve(run_dir)).filename().string();
    write_json_file((fs::path(resolve(run_dir)) / ("eval_" + split + ".json")).string(), rep);
  }
  if (as_json)
    std::cout << json(rep).dump(2) << "\n";
  else
    print_table({{rep.label, rep}});
  return 0;
}

int cmd_compare(const std::string& proposed, const std::string& visual,
                const std::string& voiceprint, const std::string& data_dir,
                const std::string& split, bool as_json) {
  const Dataset data = load_split(data_dir, parse_split(split));
  std::vector<std::pair<std::string, EvalReport>> rows;
  rows.emplace_back("mixture", evaluate_estimates(data, null_estimator()));
  if (!proposed.empty()) rows.emplace_back("proposed", evaluate(load_best(proposed), data));
  if (!visual.empty() && !voiceprint.empty())
    rows.emplace_back("baseline", evaluate_baseline(load_best(visual), load_best(voiceprint), data));
  else if (!visual.empty() || !voiceprint.empty())
    throw ConfigError("the baseline needs both --visual and --voiceprint runs");
  if (as_json) {
    json out = json::object();
    for (const auto& [name, r] : rows) out[name] = r;
    std::cout << out.dump(2) << "\n";
  } else {
    print_table(rows);
  }
  return 0;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("bad probability list '" + s + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty probability list");
  return out;
}

int cmd_grid(const std::string& config_path, const std::string& p_on, const std::string& p_off,
             const std::string& out_override) {
  const RunConfig cfg = load_run_config(resolve(config_path));
  const Dataset train = load_split(cfg.data_dir, Split::train);
  const Dataset val = load_split(cfg.data_dir, Split::val);
  const Dataset test = load_split(cfg.data_dir, Split::test);
  const std::string root =
      resolve(out_override.empty() ? (fs::path(cfg.run_dir) / "grid").string() : out_override);
  const GridReport g = grid_search_muting(parse_list(p_on), parse_list(p_off), cfg.model,
                                          cfg.train, train, val, test, root);
  std::cout << g.to_csv();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-visual speech enhancement with off-screen speaker extraction"};
  app.require_subcommand(1);
  app.add_option("--workdir", workdir, "Root for all relative paths");

  std::string config, out, run, data, split = "test", baseline, reinit, p_on = "0,0.2,0.4",
                                                 p_off = "0,0.2,0.4", visual, voiceprint;
  bool full_scale = false, no_att = false, no_mute = false, resume = false, as_json = false,
       null_model = false;

  auto* synth = app.add_subcommand("synth", "Synthesize train/val/test datasets");
  synth->add_option("config", config, "Run config JSON")->required();
  synth->add_option("--out", out, "Output directory (default: data_dir)");
  synth->add_flag("--full-scale", full_scale, "Use the 20000/5000/3000 split sizes");

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("config", config, "Run config JSON")->required();
  train->add_flag("--no-attention", no_att, "Disable the activity-driven attention");
  train->add_flag("--no-muting", no_mute, "Disable the muting augmentation");
  train->add_option("--baseline", baseline, "Train one half of the baseline")
      ->check(CLI::IsMember({"visual", "voiceprint"}));
  train->add_option("--resume-reinit", reinit,
                    "Start from a checkpoint's weights with a fresh optimizer and schedule");
  train->add_flag("--resume", resume, "Continue from run_dir/last.ckpt");
  train->add_option("--run-dir", run, "Run directory (default: run_dir from config)");

  auto* eval = app.add_subcommand("eval", "Evaluate a trained run");
  std::vector<std::string> eval_paths;
  eval->add_option("paths", eval_paths, "RUN_DIR DATA_DIR, or DATA_DIR alone with --null")
      ->required()
      ->expected(1, 2);
  eval->add_option("--split", split, "Split to score")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_flag("--json", as_json, "Print the report as JSON");
  eval->add_flag("--null", null_model, "Score the unprocessed mixture");

  auto* compare = app.add_subcommand("compare", "Proposed model versus the mixing baseline");
  compare->add_option("data_dir", data, "Dataset directory")->required();
  compare->add_option("--proposed", run, "Proposed run directory");
  compare->add_option("--visual", visual, "Visual baseline run directory");
  compare->add_option("--voiceprint", voiceprint, "Voiceprint baseline run directory");
  compare->add_option("--split", split, "Split to score")
      ->check(CLI::IsMember({"train", "val", "test"}));
  compare->add_flag("--json", as_json, "Print reports as JSON");

  auto* grid = app.add_subcommand("grid-mute", "Grid search over muting probabilities");
  grid->add_option("config", config, "Run config JSON")->required();
  grid->add_option("--p-on", p_on, "Comma-separated p_on values");
  grid->add_option("--p-off", p_off, "Comma-separated p_off values");
  grid->add_option("--out", out, "Grid output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(config, out, full_scale);
    if (*train) return cmd_train(config, no_att, no_mute, baseline, reinit, resume, run);
    if (*eval) {
      if (eval_paths.size() == 2) {
        run = eval_paths[0];
        data = eval_paths[1];
      } else if (null_model) {
        data = eval_paths[0];
      } else {
        throw ConfigError("eval needs RUN_DIR DATA_DIR, or --null DATA_DIR");
      }
      return cmd_eval(run, data, split, as_json, null_model);
    }
    if (*compare) return cmd_compare(run, visual, voiceprint, data, split, as_json);
    if (*grid) return cmd_grid(config, p_on, p_off, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ContractError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
