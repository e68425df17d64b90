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

#ifndef FAVA_EVAL_HPP_
#define FAVA_EVAL_HPP_

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fava/data.hpp"
#include "fava/model.hpp"
#include "fava/params.hpp"

namespace fava::eval {

struct EditCounts {
  int64_t substitutions = 0;
  int64_t deletions = 0;
  int64_t insertions = 0;

  int64_t total() const { return substitutions + deletions + insertions; }
  bool operator==(const EditCounts&) const = default;
};

// Unit-cost Levenshtein alignment. Among minimal alignments the one taking
// a substitution (or match) first, then an insertion, then a deletion is
// reported.
template <typename Token>
EditCounts edit_distance(const std::vector<Token>& ref, const std::vector<Token>& hyp) {
  const size_t n = ref.size(), m = hyp.size();
  // cost[i][j] = distance between ref[i:] and hyp[j:]
  std::vector<int64_t> cost((n + 1) * (m + 1));
  auto at = [&](size_t i, size_t j) -> int64_t& { return cost[i * (m + 1) + j]; };
  for (size_t i = n + 1; i-- > 0;) {
    for (size_t j = m + 1; j-- > 0;) {
      if (i == n) {
        at(i, j) = static_cast<int64_t>(m - j);
      } else if (j == m) {
        at(i, j) = static_cast<int64_t>(n - i);
      } else {
        const int64_t sub = at(i + 1, j + 1) + (ref[i] == hyp[j] ? 0 : 1);
        at(i, j) = std::min({sub, at(i, j + 1) + 1, at(i + 1, j) + 1});
      }
    }
  }
  EditCounts e;
  size_t i = 0, j = 0;
  while (i < n || j < m) {
    if (i < n && j < m && at(i, j) == at(i + 1, j + 1) + (ref[i] == hyp[j] ? 0 : 1)) {
      if (ref[i] != hyp[j]) ++e.substitutions;
      ++i, ++j;
    } else if (j < m && at(i, j) == at(i, j + 1) + 1) {
      ++e.insertions;
      ++j;
    } else {
      ++e.deletions;
      ++i;
    }
  }
  return e;
}

std::vector<std::string> split_words(const std::string& text);

struct WerReport {
  std::string condition;
  std::string checkpoint;
  EditCounts counts;
  int64_t ref_words = 0;
  int64_t utterances = 0;

  // Pooled over the corpus: total errors / total reference words.
  double wer() const;
  void add(const EditCounts& e, int64_t words);
};

enum class Condition { kClean, kBabble0dB };

std::string to_string(Condition c);
Condition condition_from_string(const std::string& s);

// Normalized log-mel for the model input.
MatrixF model_features(const dsp::Waveform& wave, const data::FeatureStats& stats);

struct EvalOptions {
  Condition condition = Condition::kClean;
  // Forced modality decision for AV models (both by default).
  model::ModalityDecision decision = model::ModalityDecision::kBoth;
  int max_symbols_per_frame = 10;
  uint64_t seed = 0;
  const dsp::Waveform* babble = nullptr;  // required for kBabble0dB
  int limit = -1;
};

struct Hypothesis {
  std::string id;
  std::string ref;
  std::string hyp;
};

// Input audio for one evaluation utterance: untouched for the clean
// condition, mixed with the babble at 0 dB otherwise.
dsp::Waveform condition_audio(const dsp::Waveform& clean, const EvalOptions& opt, size_t utterance_index);

WerReport evaluate(const model::ModelConfig& cfg, const ParameterTree<float>& params,
                   const std::vector<data::Example>& examples, const data::FeatureStats& stats,
                   const rnnt::Vocabulary& vocab, const EvalOptions& opt, std::vector<Hypothesis>* dump = nullptr);

struct Candidate {
  std::string id;
  int64_t step = 0;
  double wer_clean = 0.0;
  double wer_noisy = 0.0;
};

// argmin of the mean of clean and noisy WER; ties go to the earliest step.
size_t select_checkpoint(const std::vector<Candidate>& candidates);

std::string report_line(const WerReport& r);
void write_report(const std::filesystem::path& path, const std::vector<WerReport>& reports);
void write_hypotheses(const std::filesystem::path& path, const std::vector<Hypothesis>& hyps);

}  // namespace fava::eval

#endif  // FAVA_EVAL_HPP_
