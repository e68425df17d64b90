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

#include "fava/config.hpp"

namespace fava::config {
namespace {

TEST(KeyValues, ParseCommentsAndOverrides) {
  const auto kv = KeyValues::parse("# header\n steps = 30  # inline\n\nseed=9\nsteps = 40\n");
  EXPECT_EQ(kv.get_int("steps"), 40);
  EXPECT_EQ(kv.get_uint("seed"), 9u);
  EXPECT_EQ(kv.entries().size(), 2u);
  EXPECT_THROW(KeyValues::parse("steps 30"), Error);
  EXPECT_THROW(KeyValues::parse(" = 3"), Error);
  EXPECT_THROW(kv.get("missing"), Error);
  EXPECT_EQ(kv.get_or("missing", "x"), "x");
}

TEST(KeyValues, TypedGetters) {
  auto kv = KeyValues::parse("a = 1.5e-3\nb = -4\nc = on\nd = 12abc\ne = false\n");
  EXPECT_DOUBLE_EQ(kv.get_double("a"), 1.5e-3);
  EXPECT_EQ(kv.get_int("b"), -4);
  EXPECT_THROW(kv.get_uint("b"), Error);
  EXPECT_TRUE(kv.get_bool("c"));
  EXPECT_FALSE(kv.get_bool("e"));
  EXPECT_THROW(kv.get_int("d"), Error);
  EXPECT_THROW(kv.get_double("d"), Error);
  EXPECT_THROW(kv.get_bool("a"), Error);
}

TEST(KeyValues, DumpRoundTrips) {
  auto kv = defaults();
  kv.set("steps", "17");
  const auto back = KeyValues::parse(kv.dump());
  EXPECT_EQ(back.entries(), kv.entries());
}

TEST(Resolve, LayersAndUnknownKeys) {
  const auto path = std::filesystem::temp_directory_path() / "fava_config_test.cfg";
  std::ofstream(path) << "steps = 5\nbatch_size = 3\n";
  KeyValues flags;
  flags.set("steps", "6");
  const auto kv = resolve(&path, flags);
  EXPECT_EQ(kv.get_int("steps"), 6);
  EXPECT_EQ(kv.get_int("batch_size"), 3);
  EXPECT_EQ(kv.get("mode"), "finetune_av");
  std::ofstream(path) << "stepz = 5\n";
  EXPECT_THROW(resolve(&path, {}), Error);
  KeyValues bad;
  bad.set("nope", "1");
  EXPECT_THROW(resolve(nullptr, bad), Error);
  std::filesystem::remove(path);
  for (const auto& k : known_keys()) {
    EXPECT_TRUE(is_known_key(k.name));
    EXPECT_FALSE(k.help.empty()) << k.name;
  }
}

TEST(ModelConfigKeys, PresetsAndOverrides) {
  auto kv = defaults();
  const auto desk = model_config(kv);
  EXPECT_EQ(desk.d_model, 64);
  EXPECT_EQ(desk.vocab_size, 17);
  kv.set("d_model", "96");
  kv.set("ffn_dim", "384");
  const auto wide = model_config(kv);
  EXPECT_EQ(wide.d_model, 96);
  EXPECT_EQ(wide.video_channels.back(), 96);
  kv = defaults();
  kv.set("preset", "paper");
  const auto paper = model_config(kv);
  EXPECT_EQ(paper.d_model, 512);
  EXPECT_EQ(paper.codebook_size, 8192);
  kv.set("preset", "huge");
  EXPECT_THROW(model_config(kv), Error);
}

TEST(ModelConfigKeys, JsonRoundTrip) {
  for (const auto& c : {model::ModelConfig::desk(), model::ModelConfig::paper()}) {
    const auto text = model_config_json(c);
    EXPECT_EQ(model_config_json(model_config_from_json(text)), text);
  }
  EXPECT_THROW(model_config_from_json("{}"), Error);
}

TEST(CorpusKeys, SpecFromKeys) {
  auto kv = defaults();
  kv.set("num_train", "12");
  kv.set("seed", "3");
  const auto s = corpus_spec(kv);
  EXPECT_EQ(s.num_train, 12);
  EXPECT_EQ(s.seed, 3u);
  EXPECT_EQ(s.vocab_size, 16);
  kv.set("symbol_ms", "10");
  EXPECT_THROW(corpus_spec(kv), Error);
}

}  // namespace
}  // namespace fava::config
