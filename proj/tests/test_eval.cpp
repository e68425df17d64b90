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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "fava/eval.hpp"
#include "fava/rnnt.hpp"
#include "oracles.hpp"

namespace fava::eval {
namespace {

using Words = std::vector<std::string>;

Words random_words(Rng& rng, int max_len, int alphabet) {
  Words w(static_cast<size_t>(rng.uniform_int(0, max_len)));
  for (auto& x : w) x = std::string(1, static_cast<char>('a' + rng.uniform_int(alphabet)));
  return w;
}

TEST(EditDistance, HandCases) {
  EXPECT_EQ(edit_distance(split_words("a b c"), split_words("a b c")), (EditCounts{0, 0, 0}));
  EXPECT_EQ(edit_distance(split_words("a b c"), split_words("a c")), (EditCounts{0, 1, 0}));
  EXPECT_EQ(edit_distance(split_words("a c"), split_words("a b c")), (EditCounts{0, 0, 1}));
  EXPECT_EQ(edit_distance(split_words("a b"), split_words("c d")), (EditCounts{2, 0, 0}));
  EXPECT_EQ(edit_distance(Words{}, split_words("a b")), (EditCounts{0, 0, 2}));
  EXPECT_EQ(edit_distance(split_words("a b"), Words{}), (EditCounts{0, 2, 0}));
  // "a b" vs "b a": two substitutions tie with one insertion plus one deletion.
  EXPECT_EQ(edit_distance(split_words("a b"), split_words("b a")), (EditCounts{2, 0, 0}));
  WerReport r;
  r.add(edit_distance(split_words("a b c"), split_words("a c")), 3);
  EXPECT_NEAR(100 * r.wer(), 33.33, 0.005);
}

TEST(EditDistance, MatchesMemoizedOracle) {
  Rng rng(1, "eval/oracle");
  for (int i = 0; i < 300; ++i) {
    const auto ref = random_words(rng, 9, 4), hyp = random_words(rng, 9, 4);
    const auto e = edit_distance(ref, hyp);
    const auto o = oracle::memo_edit_distance(ref, hyp);
    ASSERT_EQ(e.total(), o.total());
    ASSERT_EQ(e.substitutions, o.s);
    ASSERT_EQ(e.deletions, o.d);
    ASSERT_EQ(e.insertions, o.i);
  }
}

TEST(EditDistance, SymmetryAndRelabeling) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_words(rng, 8, 5), b = random_words(rng, 8, 5);
    const auto ab = edit_distance(a, b), ba = edit_distance(b, a);
    EXPECT_EQ(ab.total(), ba.total());
    EXPECT_EQ(ab.deletions - ab.insertions, ba.insertions - ba.deletions);
    // Consistent relabeling of the vocabulary changes nothing.
    auto relabel = [](Words w) {
      for (auto& x : w) x = "w" + std::to_string(('e' - x[0] + 7) * 13);
      return w;
    };
    EXPECT_EQ(edit_distance(relabel(a), relabel(b)), ab);
  }
}

TEST(WerReport, PoolsCountsAcrossUtterances) {
  WerReport r;
  r.add({1, 0, 0}, 2);   // 50% on its own
  r.add({0, 0, 0}, 8);   // 0%
  EXPECT_DOUBLE_EQ(r.wer(), 0.1);  // not the 25% mean of per-utterance rates
  EXPECT_EQ(r.utterances, 2);
  WerReport empty;
  EXPECT_THROW(empty.wer(), Error);
  r.add({0, 0, 30}, 0);
  EXPECT_DOUBLE_EQ(r.wer(), 3.1);  // insertions can push WER above 100%
}

TEST(SelectCheckpoint, Examples) {
  EXPECT_EQ(select_checkpoint({{"a", 100, 2, 8}, {"b", 200, 3, 6}}), 1u);
  EXPECT_EQ(select_checkpoint({{"a", 100, 5, 5}}), 0u);
  EXPECT_EQ(select_checkpoint({{"late", 200, 4, 6}, {"early", 100, 6, 4}}), 1u);
  EXPECT_EQ(select_checkpoint({{"a", 100, 4, 6}, {"b", 200, 6, 4}, {"c", 300, 1, 20}}), 0u);
  EXPECT_THROW(select_checkpoint({}), Error);
}

TEST(Condition, Names) {
  EXPECT_EQ(condition_from_string(to_string(Condition::kClean)), Condition::kClean);
  EXPECT_EQ(condition_from_string("babble_0db"), Condition::kBabble0dB);
  EXPECT_THROW(condition_from_string("babble"), Error);
}

class EvaluateTest : public ::testing::Test {
 protected:
  void SetUp() override {
    data::CorpusSpec spec;
    Rng rng(3);
    std::vector<dsp::Waveform> pool;
    for (int i = 0; i < 4; ++i) {
      const auto symbols = data::sample_symbols(spec, 3 + i, rng);
      const auto u = data::synthesize(spec, symbols);
      data::Example ex;
      ex.id = "utt" + std::to_string(i);
      ex.audio = u.audio;
      ex.video = data::video_from_tensor(u.video);
      for (int s : symbols) ex.labels.push_back(s + 1);
      ex.transcript = vocab.decode(ex.labels);
      ex.duration_s = symbols.size() / 10.0;
      examples.push_back(ex);
      pool.push_back(u.audio);
    }
    stats = data::compute_feature_stats(pool);
    babble = dsp::make_babble(pool, 3, rng);
  }
  model::ModelConfig cfg = model::ModelConfig::desk();
  rnnt::Vocabulary vocab = rnnt::Vocabulary::letters();
  std::vector<data::Example> examples;
  data::FeatureStats stats;
  dsp::Waveform babble;
};

TEST_F(EvaluateTest, CleanConditionIsANoOp) {
  EvalOptions opt;
  const auto out = condition_audio(examples[0].audio, opt, 0);
  EXPECT_TRUE(out.samples == examples[0].audio.samples);
  opt.condition = Condition::kBabble0dB;
  EXPECT_THROW(condition_audio(examples[0].audio, opt, 0), Error);
  opt.babble = &babble;
  const auto a = condition_audio(examples[0].audio, opt, 0);
  EXPECT_TRUE(a.samples == condition_audio(examples[0].audio, opt, 0).samples);
  EXPECT_FALSE(a.samples == examples[0].audio.samples);
  const double noise_power =
      (a.samples - examples[0].audio.samples).cast<double>().squaredNorm() / static_cast<double>(a.size());
  EXPECT_NEAR(examples[0].audio.power() / noise_power, 1.0, 1e-3);
}

TEST_F(EvaluateTest, SelfConsistentTranscriptsScoreZero) {
  auto params = model::init_params(cfg, {model::kAudioFrontend, model::kVideoFrontend, model::kEncoder,
                                         model::kPredictor, model::kJoiner},
                                   4);
  params.at("joiner/b2").value(0, 3) = 50;  // always "c", up to the per-frame cap
  std::vector<Hypothesis> hyps;
  const auto first = evaluate(cfg, params, examples, stats, vocab, EvalOptions{}, &hyps);
  EXPECT_EQ(first.utterances, 4);
  EXPECT_GT(first.wer(), 0.0);
  auto forced = examples;
  for (size_t i = 0; i < forced.size(); ++i) {
    ASSERT_FALSE(hyps[i].hyp.empty());
    EXPECT_EQ(hyps[i].id, forced[i].id);
    forced[i].transcript = hyps[i].hyp;
  }
  EXPECT_EQ(evaluate(cfg, params, forced, stats, vocab, EvalOptions{}).wer(), 0.0);
  EvalOptions limited;
  limited.limit = 2;
  EXPECT_EQ(evaluate(cfg, params, forced, stats, vocab, limited).utterances, 2);
}

TEST_F(EvaluateTest, VideoOnlyIgnoresAudioCondition) {
  const auto params = model::init_params(cfg, {model::kAudioFrontend, model::kVideoFrontend, model::kEncoder,
                                               model::kPredictor, model::kJoiner},
                                         5);
  EvalOptions clean;
  clean.decision = model::ModalityDecision::kVideoOnly;
  EvalOptions noisy = clean;
  noisy.condition = Condition::kBabble0dB;
  noisy.babble = &babble;
  std::vector<Hypothesis> a, b;
  const auto ra = evaluate(cfg, params, examples, stats, vocab, clean, &a);
  const auto rb = evaluate(cfg, params, examples, stats, vocab, noisy, &b);
  EXPECT_EQ(ra.counts, rb.counts);
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].hyp, b[i].hyp);
}

TEST_F(EvaluateTest, EmptyManifestFails) {
  const auto params = model::init_params(cfg, {model::kAudioFrontend, model::kEncoder, model::kPredictor,
                                               model::kJoiner},
                                         6);
  EXPECT_THROW(evaluate(cfg, params, {}, stats, vocab, EvalOptions{}), Error);
  // Audio-only models evaluate without touching the video.
  EXPECT_NO_THROW(evaluate(cfg, params, examples, stats, vocab, EvalOptions{}));
}

TEST(Reports, FilesAreLineDelimited) {
  const auto dir = std::filesystem::temp_directory_path() / "fava_eval_reports";
  std::filesystem::create_directories(dir);
  WerReport r;
  r.condition = "babble_0db";
  r.checkpoint = "run/best";
  r.add({1, 2, 3}, 12);
  write_report(dir / "report.jsonl", {r, r});
  std::ifstream in(dir / "report.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("condition"), "babble_0db");
    EXPECT_EQ(j.at("substitutions"), 1);
    EXPECT_EQ(j.at("deletions"), 2);
    EXPECT_EQ(j.at("insertions"), 3);
    EXPECT_EQ(j.at("ref_words"), 12);
    EXPECT_DOUBLE_EQ(j.at("wer_percent").get<double>(), 50.0);
    ++n;
  }
  EXPECT_EQ(n, 2);
  write_hypotheses(dir / "hyp.txt", {{"u1", "a b", "a"}});
  std::ifstream h(dir / "hyp.txt");
  std::getline(h, line);
  EXPECT_EQ(line, "u1\tREF: a b");
  std::getline(h, line);
  EXPECT_EQ(line, "u1\tHYP: a");
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace fava::eval
