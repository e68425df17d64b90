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

#include "fava/model.hpp"

#include <iomanip>
#include <iostream>

namespace fava::model {

std::string to_string(Preset p) { return p == Preset::kPaper ? "paper" : "desk"; }

Preset preset_from_string(const std::string& s) {
  if (s == "paper") return Preset::kPaper;
  if (s == "desk") return Preset::kDesk;
  throw Error("unknown preset: " + s);
}

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.preset = Preset::kPaper;
  c.d_model = 512;
  c.num_layers = 17;
  c.num_heads = 8;
  c.ffn_dim = 2048;
  c.conv_kernel = 32;
  c.rel_pos_max = 64;
  c.audio_conv1_channels = 128;
  c.audio_conv2_channels = 32;
  c.video_height = 128;
  c.video_width = 128;
  c.video_channels = {32, 64, 128, 256, 512};
  c.codebook_size = 8192;
  c.vocab_size = 4096;
  c.pred_embed = 128;
  c.pred_hidden = 1280;
  c.pred_layers = 2;
  c.joiner_hidden = 640;
  return c;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

void ModelConfig::validate() const {
  if (d_model <= 0 || num_layers < 0 || num_heads <= 0 || d_model % num_heads != 0)
    throw Error("model config: d_model must be a positive multiple of num_heads");
  if (video_channels.empty() || video_channels.back() != d_model)
    throw Error("model config: last video channel width must equal d_model");
  if (video_height <= 0 || video_width <= 0) throw Error("model config: bad video resolution");
  if (vocab_size < 2 || pred_layers < 1) throw Error("model config: bad decoder sizes");
}

namespace {

using Shape = std::vector<int64_t>;

void linear_specs(std::vector<ParamSpec>& out, const std::string& w, const std::string& b, int64_t in, int64_t o) {
  out.push_back({w, {in, o}, InitKind::kWeight});
  out.push_back({b, {o}, InitKind::kBias});
}

void norm_specs(std::vector<ParamSpec>& out, const std::string& pre, int64_t d) {
  out.push_back({pre + "_g", {d}, InitKind::kGain});
  out.push_back({pre + "_b", {d}, InitKind::kBias});
}

void ffn_specs(std::vector<ParamSpec>& out, const std::string& pre, const ModelConfig& c) {
  norm_specs(out, pre + "/ln", c.d_model);
  linear_specs(out, pre + "/w1", pre + "/b1", c.d_model, c.ffn_dim);
  linear_specs(out, pre + "/w2", pre + "/b2", c.ffn_dim, c.d_model);
}

}  // namespace

std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg, const Components& components) {
  cfg.validate();
  std::vector<ParamSpec> out;
  const int64_t d = cfg.d_model;
  if (components.count(kAudioFrontend)) {
    const int64_t c1 = cfg.audio_conv1_channels, c2 = cfg.audio_conv2_channels;
    out.push_back({"audio_frontend/conv1/w", {3, 3, 1, c1}, InitKind::kReluWeight});
    out.push_back({"audio_frontend/conv1/b", {c1}, InitKind::kBias});
    out.push_back({"audio_frontend/conv2/w", {3, 3, c1, c2}, InitKind::kReluWeight});
    out.push_back({"audio_frontend/conv2/b", {c2}, InitKind::kBias});
    linear_specs(out, "audio_frontend/proj/w", "audio_frontend/proj/b", cfg.audio_freq_out() * c2, d);
  }
  if (components.count(kVideoFrontend)) {
    int64_t cin = 3;
    for (size_t i = 0; i < cfg.video_channels.size(); ++i) {
      const std::string stage = "video_frontend/stage" + std::to_string(i);
      const int64_t cout = cfg.video_channels[i];
      out.push_back({stage + "/spatial/w", {1, 3, 3, cin, cout}, InitKind::kReluWeight});
      out.push_back({stage + "/spatial/b", {cout}, InitKind::kBias});
      out.push_back({stage + "/temporal/w", {3, 1, 1, cout, cout}, InitKind::kReluWeight});
      out.push_back({stage + "/temporal/b", {cout}, InitKind::kBias});
      cin = cout;
    }
  }
  if (components.count(kEncoder)) {
    for (int l = 0; l < cfg.num_layers; ++l) {
      const std::string pre = "encoder/layer" + std::to_string(l);
      ffn_specs(out, pre + "/ffn1", cfg);
      const std::string a = pre + "/mhsa";
      norm_specs(out, a + "/ln", d);
      for (const char* m : {"q", "k", "v", "o"}) linear_specs(out, a + "/w" + m, a + "/b" + m, d, d);
      out.push_back({a + "/rel_bias", {cfg.num_heads, 2 * cfg.rel_pos_max + 1}, InitKind::kZero});
      const std::string cv = pre + "/conv";
      norm_specs(out, cv + "/ln", d);
      linear_specs(out, cv + "/pw1_w", cv + "/pw1_b", d, 2 * d);
      out.push_back({cv + "/dw_w", {cfg.conv_kernel, d}, InitKind::kWeight});
      out.push_back({cv + "/dw_b", {d}, InitKind::kBias});
      norm_specs(out, cv + "/ln2", d);
      linear_specs(out, cv + "/pw2_w", cv + "/pw2_b", d, d);
      ffn_specs(out, pre + "/ffn2", cfg);
      norm_specs(out, pre + "/ln", d);
    }
  }
  if (components.count(kMlmHead)) {
    out.push_back({"mlm_head/w", {d, cfg.codebook_size}, InitKind::kOutput});
    out.push_back({"mlm_head/b", {cfg.codebook_size}, InitKind::kBias});
  }
  if (components.count(kPredictor)) {
    const int64_t h = cfg.pred_hidden;
    out.push_back({"predictor/embed", {cfg.vocab_size, cfg.pred_embed}, InitKind::kEmbedding});
    for (int l = 0; l < cfg.pred_layers; ++l) {
      const std::string pre = "predictor/lstm" + std::to_string(l);
      out.push_back({pre + "/w_ih", {l == 0 ? cfg.pred_embed : h, 4 * h}, InitKind::kWeight});
      out.push_back({pre + "/w_hh", {h, 4 * h}, InitKind::kWeight});
      out.push_back({pre + "/b", {4 * h}, InitKind::kBias});
    }
  }
  if (components.count(kJoiner)) {
    const int64_t j = cfg.joiner_hidden;
    out.push_back({"joiner/enc_proj", {d, j}, InitKind::kWeight});
    out.push_back({"joiner/pred_proj", {cfg.pred_hidden, j}, InitKind::kWeight});
    linear_specs(out, "joiner/w1", "joiner/b1", j, j);
    linear_specs(out, "joiner/w2", "joiner/b2", j, cfg.vocab_size);
  }
  return out;
}

int64_t count_parameters(const ModelConfig& cfg, const Components& components) {
  int64_t n = 0;
  for (const auto& s : parameter_specs(cfg, components)) {
    int64_t k = 1;
    for (auto v : s.shape) k *= v;
    n += k;
  }
  return n;
}

ParameterTree<float> init_params(const ModelConfig& cfg, const Components& components, uint64_t seed) {
  ParameterTree<float> tree;
  for (const auto& spec : parameter_specs(cfg, components)) {
    const auto [rows, cols] = matrix_dims(spec.shape);
    MatrixF m(rows, cols);
    switch (spec.init) {
      case InitKind::kBias:
      case InitKind::kZero:
        m.setZero();
        break;
      case InitKind::kGain:
        m.setOnes();
        break;
      case InitKind::kWeight:
      case InitKind::kReluWeight:
      case InitKind::kOutput:
      case InitKind::kEmbedding: {
        Rng rng(seed, "init/" + spec.name);
        const double fan_in = static_cast<double>(rows);
        double bound = 1.0;
        if (spec.init == InitKind::kWeight) bound = 1.0 / std::sqrt(fan_in);
        if (spec.init == InitKind::kReluWeight) bound = std::sqrt(6.0 / fan_in);
        if (spec.init == InitKind::kOutput) bound = 0.1 / std::sqrt(fan_in);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
        break;
      }
    }
    tree.add(spec.name, spec.shape, std::move(m));
  }
  return tree;
}

void write_introspection(std::ostream& os, const ParameterTree<float>& params) {
  for (const auto& [name, t] : params.tensors()) {
    os << name << "\t[";
    for (size_t i = 0; i < t.shape.size(); ++i) os << (i ? "," : "") << t.shape[i];
    os << "]\t" << t.numel() << "\n";
  }
  for (const auto& root : params.roots()) os << "total:" << root << "\t" << params.count(root) << "\n";
  os << "total\t" << params.count() << "\n";
}

std::string to_string(ModalityDecision d) {
  switch (d) {
    case ModalityDecision::kBoth:
      return "both";
    case ModalityDecision::kAudioOnly:
      return "audio_only";
    case ModalityDecision::kVideoOnly:
      return "video_only";
  }
  return "both";
}

ModalityDecision sample_modality_dropout(Rng& rng) {
  const double u = rng.uniform();
  if (u < 0.5) return ModalityDecision::kBoth;
  if (u < 0.75) return ModalityDecision::kAudioOnly;
  return ModalityDecision::kVideoOnly;
}

std::atomic<int>& fuse_truncations() {
  static std::atomic<int> count{0};
  return count;
}

}  // namespace fava::model
