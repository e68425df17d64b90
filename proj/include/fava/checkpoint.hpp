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

#ifndef FAVA_CHECKPOINT_HPP_
#define FAVA_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fava/bestrq.hpp"
#include "fava/data.hpp"
#include "fava/model.hpp"
#include "fava/params.hpp"

namespace fava::ckpt {

// Adam moments mirror the parameter tree tensor by tensor.
struct OptimizerState {
  int64_t step = 0;
  ParameterTree<float> m;
  ParameterTree<float> v;

  bool operator==(const OptimizerState&) const = default;
};

OptimizerState zero_state(const ParameterTree<float>& params);

// One dev evaluation, kept so that a resumed run selects the same best
// checkpoint as an uninterrupted one.
struct EvalRecord {
  int64_t step = 0;
  double wer_clean = 0.0;
  double wer_noisy = 0.0;

  bool operator==(const EvalRecord&) const = default;
};

struct Checkpoint {
  int64_t step = 0;
  std::string mode;
  model::ModelConfig model;
  uint64_t seed = 0;
  std::string resolved_config;  // "key = value" lines
  ParameterTree<float> params;
  OptimizerState optimizer;
  std::optional<bestrq::RandomQuantizer> quantizer;
  std::optional<data::FeatureStats> feature_stats;
  std::vector<EvalRecord> evals;
  int64_t skipped_steps = 0;
};

// Layout: <dir>/meta.json, <dir>/tensors.bin, <dir>/optimizer.bin. The
// quantizer and the frozen feature statistics live in tensors.bin under the
// reserved "quantizer/" and "frozen/" namespaces. Every blob carries an
// FNV-1a checksum in the index.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Parameters only; skips optimizer.bin.
Checkpoint load_params(const std::filesystem::path& dir);

uint64_t fnv1a(const void* data, size_t size);

inline constexpr const char* kQuantizerRoot = "quantizer";
inline constexpr const char* kFrozenRoot = "frozen";

}  // namespace fava::ckpt

#endif  // FAVA_CHECKPOINT_HPP_
