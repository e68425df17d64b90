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

#include "fava/eval.hpp"

#include <fstream>
#include <sstream>

#include "fava/rnnt.hpp"
#include "json.hpp"

namespace fava::eval {

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> out;
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

double WerReport::wer() const {
  if (ref_words <= 0) throw Error("WER undefined without reference words");
  return static_cast<double>(counts.total()) / static_cast<double>(ref_words);
}

void WerReport::add(const EditCounts& e, int64_t words) {
  counts.substitutions += e.substitutions;
  counts.deletions += e.deletions;
  counts.insertions += e.insertions;
  ref_words += words;
  ++utterances;
}

std::string to_string(Condition c) { return c == Condition::kClean ? "clean" : "babble_0db"; }

Condition condition_from_string(const std::string& s) {
  if (s == "clean") return Condition::kClean;
  if (s == "babble_0db") return Condition::kBabble0dB;
  throw Error("unknown condition: " + s);
}

MatrixF model_features(const dsp::Waveform& wave, const data::FeatureStats& stats) {
  return stats.normalize(dsp::compute_logmel(wave).frames);
}

dsp::Waveform condition_audio(const dsp::Waveform& clean, const EvalOptions& opt, size_t utterance_index) {
  if (opt.condition == Condition::kClean) return clean;
  if (!opt.babble) throw Error("babble condition requires a babble waveform");
  Rng rng(opt.seed, "eval/babble_offset", utterance_index);
  return dsp::mix_at_snr(clean, *opt.babble, 0.0, rng);
}

WerReport evaluate(const model::ModelConfig& cfg, const ParameterTree<float>& params,
                   const std::vector<data::Example>& examples, const data::FeatureStats& stats,
                   const rnnt::Vocabulary& vocab, const EvalOptions& opt, std::vector<Hypothesis>* dump) {
  if (examples.empty()) throw Error("evaluate: empty manifest");
  WerReport report;
  report.condition = to_string(opt.condition);
  const bool av = params.has_root(model::kVideoFrontend);
  size_t n = examples.size();
  if (opt.limit >= 0) n = std::min(n, static_cast<size_t>(opt.limit));
  for (size_t i = 0; i < n; ++i) {
    const auto& ex = examples[i];
    const MatrixF feats = model_features(condition_audio(ex.audio, opt, i), stats);
    model::Inputs in{&feats, av ? &ex.video.frames : nullptr, opt.decision};
    const MatrixF enc = model::encode_forward(in, cfg, params);
    const auto hyp_ids = rnnt::greedy_decode(enc, cfg, params, opt.max_symbols_per_frame);
    const std::string hyp = vocab.decode(hyp_ids);
    const auto ref_words = split_words(ex.transcript);
    report.add(edit_distance(ref_words, split_words(hyp)), static_cast<int64_t>(ref_words.size()));
    if (dump) dump->push_back({ex.id, ex.transcript, hyp});
  }
  return report;
}

size_t select_checkpoint(const std::vector<Candidate>& candidates) {
  if (candidates.empty()) throw Error("select_checkpoint: no candidates");
  size_t best = 0;
  for (size_t i = 1; i < candidates.size(); ++i) {
    const double a = (candidates[i].wer_clean + candidates[i].wer_noisy) / 2;
    const double b = (candidates[best].wer_clean + candidates[best].wer_noisy) / 2;
    if (a < b || (a == b && candidates[i].step < candidates[best].step)) best = i;
  }
  return best;
}

std::string report_line(const WerReport& r) {
  nlohmann::json j;
  j["condition"] = r.condition;
  j["checkpoint"] = r.checkpoint;
  j["substitutions"] = r.counts.substitutions;
  j["deletions"] = r.counts.deletions;
  j["insertions"] = r.counts.insertions;
  j["ref_words"] = r.ref_words;
  j["utterances"] = r.utterances;
  j["wer_percent"] = 100.0 * r.wer();
  return j.dump();
}

void write_report(const std::filesystem::path& path, const std::vector<WerReport>& reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : reports) out << report_line(r) << '\n';
}

void write_hypotheses(const std::filesystem::path& path, const std::vector<Hypothesis>& hyps) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& h : hyps) out << h.id << "\tREF: " << h.ref << "\n" << h.id << "\tHYP: " << h.hyp << "\n";
}

}  // namespace fava::eval
