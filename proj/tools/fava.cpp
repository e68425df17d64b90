// Copyright 2026 The FAVA-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// fava: command-line front end for corpus generation, training, evaluation,
// decoding and checkpoint inspection.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "fava/checkpoint.hpp"
#include "fava/config.hpp"
#include "fava/data.hpp"
#include "fava/eval.hpp"
#include "fava/model.hpp"
#include "fava/trainer.hpp"

namespace fs = std::filesystem;
using namespace fava;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

class UsageError : public Error {
 public:
  using Error::Error;
};

struct Invocation {
  std::string config_path;
  bool force = false;
  std::map<std::string, std::string> flags;
};

void add_key_flags(CLI::App* app, Invocation& inv) {
  app->add_option("--config", inv.config_path, "key = value configuration file");
  app->add_flag("--force", inv.force, "overwrite a non-empty --out_dir");
  for (const auto& k : config::known_keys()) {
    app->add_option("--" + k.name, inv.flags[k.name], k.help);
  }
}

bool contains_path(const fs::path& dir, const fs::path& p) {
  if (p.empty()) return false;
  const auto d = fs::weakly_canonical(dir);
  const auto q = fs::weakly_canonical(p);
  auto [a, b] = std::mismatch(d.begin(), d.end(), q.begin(), q.end());
  return a == d.end();
}

// Defaults < subcommand defaults < config file < flags.
config::KeyValues resolve(const CLI::App* app, const Invocation& inv,
                          const std::map<std::string, std::string>& sub_defaults) {
  config::KeyValues overrides;
  for (const auto& [k, v] : inv.flags) {
    if (app->get_option("--" + k)->count() > 0) overrides.set(k, v);
  }
  config::KeyValues file;
  if (!inv.config_path.empty()) {
    if (!fs::exists(inv.config_path)) throw UsageError("config file not found: " + inv.config_path);
    file = config::KeyValues::load(inv.config_path);
    for (const auto& [k, _] : file.entries()) {
      if (!config::is_known_key(k)) throw UsageError("unknown config key in " + inv.config_path + ": " + k);
    }
  }
  config::KeyValues kv = config::defaults();
  for (const auto& [k, v] : sub_defaults) kv.set(k, v);
  kv.merge(file);
  kv.merge(overrides);
  return kv;
}

std::string require(const config::KeyValues& kv, const std::string& key) {
  const std::string& v = kv.get(key);
  if (v.empty()) throw UsageError("--" + key + " is required");
  return v;
}

// Creates out_dir, refusing to touch existing contents without --force.
fs::path prepare_out_dir(const config::KeyValues& kv, bool force) {
  const fs::path out = require(kv, "out_dir");
  if (fs::exists(out) && !fs::is_directory(out)) throw UsageError("--out_dir is not a directory: " + out.string());
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) throw UsageError("refusing to overwrite non-empty " + out.string() + " (use --force)");
    for (const char* key : {"data_dir", "init", "resume", "ckpt"}) {
      if (contains_path(out, kv.get(key)))
        throw UsageError("--" + std::string(key) + " lies inside --out_dir; refusing to clear it");
    }
    fs::remove_all(out);
  }
  fs::create_directories(out);
  return out;
}

void echo_config(const config::KeyValues& kv, const fs::path& out_dir) {
  const std::string table = kv.dump();
  std::cout << "# resolved configuration\n" << table << std::flush;
  if (!out_dir.empty()) {
    std::ofstream os(out_dir / "resolved.cfg");
    os << table;
    if (!os) throw Error("cannot write " + (out_dir / "resolved.cfg").string());
  }
}

trainer::TrainConfig train_config(const config::KeyValues& kv) {
  try {
    return trainer::TrainConfig::from(kv);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

void check_mode(const trainer::TrainConfig& cfg, bool pretrain, const std::string& sub) {
  if (trainer::is_pretrain(cfg.mode) != pretrain || (sub == "adapt") != (cfg.mode == trainer::Mode::kAdaptAudioToAv))
    throw UsageError("mode " + trainer::to_string(cfg.mode) + " cannot be run by '" + sub + "'");
}

void print_result(const trainer::RunResult& r) {
  std::cout << "final checkpoint: " << r.final_checkpoint.string() << "\n";
  if (!r.best_checkpoint.empty()) std::cout << "best checkpoint: " << r.best_checkpoint.string() << "\n";
  std::cout << "final loss: " << r.final_loss << "\n";
  if (r.skipped_steps > 0) std::cout << "skipped steps: " << r.skipped_steps << "\n";
}

int cmd_gen_data(const config::KeyValues& kv, bool force) {
  data::CorpusSpec spec;
  try {
    spec = config::corpus_spec(kv);
    spec.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto out = prepare_out_dir(kv, force);
  echo_config(kv, out);
  data::generate_corpus(spec, out);
  std::cout << "corpus written to " << out.string() << "\n";
  return 0;
}

int cmd_pretrain(const config::KeyValues& kv, bool force) {
  const auto cfg = train_config(kv);
  check_mode(cfg, true, "pretrain");
  const fs::path data_dir = require(kv, "data_dir");
  const auto out = prepare_out_dir(kv, force);
  echo_config(kv, out);
  const auto data = trainer::load_training_data(data_dir, true, false, false);
  print_result(trainer::run_pretrain(cfg, data, out, kv.get("resume")));
  return 0;
}

int cmd_finetune(const config::KeyValues& kv, bool force, const std::string& sub) {
  const auto cfg = train_config(kv);
  check_mode(cfg, false, sub);
  const fs::path data_dir = require(kv, "data_dir");
  const fs::path resume = kv.get("resume");
  const fs::path init_dir = kv.get("init");
  if (trainer::needs_init(cfg.mode) && init_dir.empty() && resume.empty())
    throw UsageError("mode " + trainer::to_string(cfg.mode) + " requires --init");
  if (!trainer::needs_init(cfg.mode) && !init_dir.empty())
    throw UsageError("mode " + trainer::to_string(cfg.mode) + " trains from scratch; drop --init");
  const auto out = prepare_out_dir(kv, force);
  echo_config(kv, out);
  const auto data = trainer::load_training_data(data_dir, false, true, true, cfg.dev_limit);
  std::optional<ParameterTree<float>> init;
  if (!init_dir.empty() && resume.empty()) {
    const auto src = ckpt::load_params(init_dir);
    if (cfg.mode == trainer::Mode::kAdaptAudioToAv) {
      init = trainer::adapt_audio_to_av(src.params, cfg.model, cfg.seed);
    } else {
      init = trainer::init_stage2_from_stage1(src.params, cfg.model, cfg.mode, cfg.seed);
    }
  }
  print_result(trainer::run_finetune(cfg, data, out, init ? &*init : nullptr, resume));
  return 0;
}

struct LoadedEval {
  ckpt::Checkpoint ckpt;
  rnnt::Vocabulary vocab;
  data::FeatureStats stats;
  std::vector<data::Example> examples;
  dsp::Waveform babble;
  eval::EvalOptions opt;
};

LoadedEval load_for_eval(const config::KeyValues& kv) {
  LoadedEval le;
  const fs::path ckpt_dir = require(kv, "ckpt");
  const fs::path data_dir = require(kv, "data_dir");
  le.ckpt = ckpt::load_params(ckpt_dir);
  if (le.ckpt.params.has_root(model::kMlmHead)) throw UsageError("checkpoint " + ckpt_dir.string() + " has no decoder");
  le.vocab = rnnt::Vocabulary::letters(le.ckpt.model.vocab_size - 1);
  le.stats = le.ckpt.feature_stats ? *le.ckpt.feature_stats : data::read_feature_stats(data_dir / "feature_stats.fvt");
  le.examples = data::load_split(data_dir, kv.get("split"), le.vocab).examples;
  le.opt.max_symbols_per_frame = static_cast<int>(kv.get_int("max_symbols_per_frame"));
  le.opt.seed = kv.get_uint("seed");
  try {
    le.opt.condition = eval::condition_from_string(kv.get("condition"));
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const std::string decision = kv.get("decision");
  if (decision == "audio_only") {
    le.opt.decision = model::ModalityDecision::kAudioOnly;
  } else if (decision == "video_only") {
    le.opt.decision = model::ModalityDecision::kVideoOnly;
  } else if (!decision.empty() && decision != "both") {
    throw UsageError("unknown decision: " + decision);
  }
  if (le.opt.condition == eval::Condition::kBabble0dB) {
    le.babble = dsp::read_wav(data_dir / "noise" / "babble_eval.wav");
    le.opt.babble = &le.babble;
  }
  return le;
}

int cmd_evaluate(const config::KeyValues& kv, bool force) {
  auto le = load_for_eval(kv);
  const auto out = prepare_out_dir(kv, force);
  echo_config(kv, out);
  std::vector<eval::Hypothesis> hyps;
  auto report =
      eval::evaluate(le.ckpt.model, le.ckpt.params, le.examples, le.stats, le.vocab, le.opt, &hyps);
  report.checkpoint = kv.get("ckpt");
  eval::write_report(out / "report.jsonl", {report});
  eval::write_hypotheses(out / "hypotheses.txt", hyps);
  std::cout << eval::report_line(report) << "\n";
  return 0;
}

int cmd_decode(const config::KeyValues& kv, bool force) {
  auto le = load_for_eval(kv);
  const auto out = prepare_out_dir(kv, force);
  echo_config(kv, out);
  std::vector<eval::Hypothesis> hyps;
  eval::evaluate(le.ckpt.model, le.ckpt.params, le.examples, le.stats, le.vocab, le.opt, &hyps);
  std::ofstream os(out / "decode.txt");
  for (const auto& h : hyps) {
    const std::string line = h.id + " " + h.hyp;
    os << line << "\n";
    std::cout << line << "\n";
  }
  if (!os) throw Error("cannot write " + (out / "decode.txt").string());
  return 0;
}

void print_summary(const model::ModelConfig& m, const std::string& mode) {
  std::cout << "preset " << model::to_string(m.preset) << " mode " << mode << " d_model " << m.d_model << " layers "
            << m.num_layers << " heads " << m.num_heads << " vocab " << m.vocab_size << "\n";
}

int cmd_inspect(const config::KeyValues& kv) {
  if (!kv.get("ckpt").empty()) {
    const auto c = ckpt::load_params(kv.get("ckpt"));
    print_summary(c.model, c.mode);
    std::cout << "step " << c.step << "\n";
    model::write_introspection(std::cout, c.params);
    return 0;
  }
  // No checkpoint: describe the tree a mode would allocate, without allocating it.
  const auto cfg = train_config(kv);
  const auto comps = trainer::components_for(cfg.mode);
  print_summary(cfg.model, trainer::to_string(cfg.mode));
  std::map<std::string, int64_t> per_root;
  int64_t total = 0;
  for (const auto& s : model::parameter_specs(cfg.model, comps)) {
    int64_t n = 1;
    std::string shape;
    for (auto d : s.shape) {
      n *= d;
      shape += (shape.empty() ? "" : ",") + std::to_string(d);
    }
    std::cout << s.name << "\t[" << shape << "]\t" << n << "\n";
    per_root[root_of(s.name)] += n;
    total += n;
  }
  for (const auto& [root, n] : per_root) std::cout << "total:" << root << "\t" << n << "\n";
  std::cout << "total\t" << total << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fava: audio-visual speech recognition with BEST-RQ pre-training"};
  app.require_subcommand(1);
  struct Sub {
    std::string name;
    std::string help;
    std::map<std::string, std::string> defaults;
    CLI::App* app = nullptr;
    Invocation inv;
  };
  std::vector<Sub> subs = {
      {"gen-data", "generate the synthetic paired corpus", {}},
      {"pretrain", "stage 1: masked prediction pre-training", {{"mode", "pretrain_av"}}},
      {"finetune", "stage 2 fine-tuning or training from scratch", {{"mode", "finetune_av"}}},
      {"adapt", "convert an audio-only ASR checkpoint to audio-visual", {{"mode", "adapt_audio_to_av"}}},
      {"evaluate", "WER on a split under a condition", {}},
      {"decode", "greedy hypotheses, one 'id hyp' line per utterance", {}},
      {"inspect", "parameter table of a checkpoint or a preset", {}},
  };
  for (auto& s : subs) {
    s.app = app.add_subcommand(s.name, s.help);
    add_key_flags(s.app, s.inv);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  try {
    for (auto& s : subs) {
      if (!s.app->parsed()) continue;
      const auto kv = resolve(s.app, s.inv, s.defaults);
      if (s.name == "gen-data") return cmd_gen_data(kv, s.inv.force);
      if (s.name == "pretrain") return cmd_pretrain(kv, s.inv.force);
      if (s.name == "finetune" || s.name == "adapt") return cmd_finetune(kv, s.inv.force, s.name);
      if (s.name == "evaluate") return cmd_evaluate(kv, s.inv.force);
      if (s.name == "decode") return cmd_decode(kv, s.inv.force);
      if (s.name == "inspect") return cmd_inspect(kv);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
