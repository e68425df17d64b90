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

#include "fava/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fava::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(origin + ":" + std::to_string(lineno) + ": empty key");
    kv.set(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

const std::string& KeyValues::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw Error("missing config key: " + key);
  return it->second;
}

std::string KeyValues::get_or(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int64_t KeyValues::get_int(const std::string& key) const {
  const std::string& s = get(key);
  int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw Error("config key " + key + ": not an integer: " + s);
  return v;
}

uint64_t KeyValues::get_uint(const std::string& key) const {
  const std::string& s = get(key);
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw Error("config key " + key + ": not a non-negative integer: " + s);
  return v;
}

double KeyValues::get_double(const std::string& key) const {
  const std::string& s = get(key);
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw Error("");
    return v;
  } catch (const std::exception&) {
    throw Error("config key " + key + ": not a number: " + s);
  }
}

bool KeyValues::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw Error("config key " + key + ": not a boolean: " + s);
}

void KeyValues::merge(const KeyValues& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string KeyValues::dump() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

const std::vector<KeySpec>& known_keys() {
  static const std::vector<KeySpec> keys = {
      // run
      {"mode", "finetune_av", "training mode"},
      {"preset", "desk", "model preset: desk or paper"},
      {"seed", "7", "root seed for every random substream"},
      {"steps", "1000", "optimizer steps"},
      {"batch_size", "8", "utterances per step"},
      {"warmup_steps", "200", "learning-rate warmup steps"},
      {"peak_lr", "0.002", "peak learning rate"},
      {"clip_norm", "1.0", "global gradient-norm clip"},
      {"adam_beta1", "0.9", "Adam beta1"},
      {"adam_beta2", "0.98", "Adam beta2"},
      {"adam_eps", "1e-9", "Adam epsilon"},
      {"log_interval", "10", "steps between metric records"},
      {"eval_interval", "200", "steps between dev evaluations"},
      {"checkpoint_interval", "200", "steps between checkpoints"},
      {"data_dir", "", "corpus directory"},
      {"out_dir", "", "output directory"},
      {"init", "", "checkpoint to initialize from"},
      {"resume", "", "checkpoint to resume from"},
      {"ckpt", "", "checkpoint to evaluate, decode or inspect"},
      // pre-training
      {"mask_prob", "0.01", "probability that a frame starts a masked span"},
      {"mask_span", "40", "masked span length in 10 ms frames"},
      {"mask_fill_std", "0.1", "std of the noise written into masked frames"},
      {"quantizer_seed", "1234", "seed of the shared random-projection quantizer"},
      {"code_dim", "16", "quantizer projection dimension"},
      {"codebook_size", "", "quantizer codebook size (preset default when empty)"},
      // augmentation
      {"noise", "true", "on-the-fly noise during fine-tuning"},
      {"snr_min", "0", "lowest training SNR in dB"},
      {"snr_max", "20", "highest training SNR in dB"},
      {"clean_prob", "0.25", "probability that a training utterance stays clean"},
      {"specaug", "true", "SpecAugment during fine-tuning"},
      {"specaug_freq_masks", "2", "SpecAugment frequency masks"},
      {"specaug_freq_width", "27", "SpecAugment maximum frequency width"},
      {"specaug_time_masks", "2", "SpecAugment time masks"},
      {"specaug_time_ratio", "0.05", "SpecAugment maximum time width as a fraction of T"},
      {"modality_dropout", "true", "modality dropout in AV modes"},
      // evaluation
      {"condition", "clean", "evaluation condition: clean or babble_0db"},
      {"split", "test", "split to evaluate or decode"},
      {"decision", "", "force a modality decision at evaluation: both, audio_only or video_only"},
      {"max_symbols_per_frame", "10", "greedy decoding emission cap per frame"},
      {"dev_limit", "-1", "cap on dev utterances used for checkpoint selection (-1 = all)"},
      // corpus
      {"num_pretrain", "800", "pre-training utterances"},
      {"num_train", "400", "labelled training utterances"},
      {"num_dev", "60", "dev utterances"},
      {"num_test", "100", "test utterances"},
      {"min_symbols", "3", "fewest symbols per utterance"},
      {"max_symbols", "8", "most symbols per utterance"},
      {"vocab_size", "16", "number of non-blank symbols"},
      {"video_size", "32", "video height and width"},
      {"symbol_ms", "100", "symbol duration"},
      {"amplitude", "0.3", "chord amplitude"},
      {"noise_seconds", "5", "length of the generated noise sources"},
      {"babble_k", "30", "utterances mixed into the evaluation babble"},
      {"grammar_branching", "4", "successors allowed after each symbol (vocab_size = i.i.d.)"},
      // model overrides (preset value when empty)
      {"d_model", "", "encoder width"},
      {"num_layers", "", "Conformer blocks"},
      {"num_heads", "", "attention heads"},
      {"ffn_dim", "", "feed-forward width"},
      {"conv_kernel", "", "depthwise kernel size"},
  };
  return keys;
}

bool is_known_key(const std::string& key) {
  const auto& keys = known_keys();
  return std::any_of(keys.begin(), keys.end(), [&](const KeySpec& k) { return k.name == key; });
}

KeyValues defaults() {
  KeyValues kv;
  for (const auto& k : known_keys()) kv.set(k.name, k.default_value);
  return kv;
}

KeyValues resolve(const std::filesystem::path* file, const KeyValues& overrides) {
  KeyValues kv = defaults();
  auto check = [](const KeyValues& src, const std::string& origin) {
    for (const auto& [k, _] : src.entries()) {
      if (!is_known_key(k)) throw Error(origin + ": unknown config key: " + k);
    }
  };
  if (file) {
    const KeyValues f = KeyValues::load(*file);
    check(f, file->string());
    kv.merge(f);
  }
  check(overrides, "command line");
  kv.merge(overrides);
  return kv;
}

data::CorpusSpec corpus_spec(const KeyValues& kv) {
  data::CorpusSpec s;
  s.num_pretrain = static_cast<int>(kv.get_int("num_pretrain"));
  s.num_train = static_cast<int>(kv.get_int("num_train"));
  s.num_dev = static_cast<int>(kv.get_int("num_dev"));
  s.num_test = static_cast<int>(kv.get_int("num_test"));
  s.min_symbols = static_cast<int>(kv.get_int("min_symbols"));
  s.max_symbols = static_cast<int>(kv.get_int("max_symbols"));
  s.vocab_size = static_cast<int>(kv.get_int("vocab_size"));
  s.seed = kv.get_uint("seed");
  s.video_height = s.video_width = static_cast<int>(kv.get_int("video_size"));
  s.symbol_ms = static_cast<int>(kv.get_int("symbol_ms"));
  s.amplitude = kv.get_double("amplitude");
  s.noise_seconds = kv.get_double("noise_seconds");
  s.babble_k = static_cast<int>(kv.get_int("babble_k"));
  s.grammar_branching = static_cast<int>(kv.get_int("grammar_branching"));
  s.validate();
  return s;
}

model::ModelConfig model_config(const KeyValues& kv) {
  const auto preset = model::preset_from_string(kv.get("preset"));
  model::ModelConfig c = preset == model::Preset::kPaper ? model::ModelConfig::paper() : model::ModelConfig::desk();
  if (preset == model::Preset::kDesk) {
    c.vocab_size = static_cast<int>(kv.get_int("vocab_size")) + 1;
    c.video_height = c.video_width = static_cast<int>(kv.get_int("video_size"));
  }
  auto override_int = [&](const char* key, int& field) {
    if (!kv.get_or(key, "").empty()) field = static_cast<int>(kv.get_int(key));
  };
  override_int("d_model", c.d_model);
  override_int("num_layers", c.num_layers);
  override_int("num_heads", c.num_heads);
  override_int("ffn_dim", c.ffn_dim);
  override_int("conv_kernel", c.conv_kernel);
  override_int("codebook_size", c.codebook_size);
  c.video_channels.back() = c.d_model;
  c.validate();
  return c;
}

std::string model_config_json(const model::ModelConfig& c) {
  nlohmann::json j;
  j["preset"] = model::to_string(c.preset);
  j["feature_dim"] = c.feature_dim;
  j["d_model"] = c.d_model;
  j["num_layers"] = c.num_layers;
  j["num_heads"] = c.num_heads;
  j["ffn_dim"] = c.ffn_dim;
  j["conv_kernel"] = c.conv_kernel;
  j["rel_pos_max"] = c.rel_pos_max;
  j["audio_conv1_channels"] = c.audio_conv1_channels;
  j["audio_conv2_channels"] = c.audio_conv2_channels;
  j["video_height"] = c.video_height;
  j["video_width"] = c.video_width;
  j["video_channels"] = c.video_channels;
  j["codebook_size"] = c.codebook_size;
  j["vocab_size"] = c.vocab_size;
  j["pred_embed"] = c.pred_embed;
  j["pred_hidden"] = c.pred_hidden;
  j["pred_layers"] = c.pred_layers;
  j["joiner_hidden"] = c.joiner_hidden;
  return j.dump();
}

model::ModelConfig model_config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    model::ModelConfig c;
    c.preset = model::preset_from_string(j.at("preset").get<std::string>());
    c.feature_dim = j.at("feature_dim");
    c.d_model = j.at("d_model");
    c.num_layers = j.at("num_layers");
    c.num_heads = j.at("num_heads");
    c.ffn_dim = j.at("ffn_dim");
    c.conv_kernel = j.at("conv_kernel");
    c.rel_pos_max = j.at("rel_pos_max");
    c.audio_conv1_channels = j.at("audio_conv1_channels");
    c.audio_conv2_channels = j.at("audio_conv2_channels");
    c.video_height = j.at("video_height");
    c.video_width = j.at("video_width");
    c.video_channels = j.at("video_channels").get<std::vector<int>>();
    c.codebook_size = j.at("codebook_size");
    c.vocab_size = j.at("vocab_size");
    c.pred_embed = j.at("pred_embed");
    c.pred_hidden = j.at("pred_hidden");
    c.pred_layers = j.at("pred_layers");
    c.joiner_hidden = j.at("joiner_hidden");
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad model config: ") + e.what());
  }
}

}  // namespace fava::config
