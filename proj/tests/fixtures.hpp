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

// Small deterministic model fixtures shared by tests.
#ifndef FAVA_TESTS_FIXTURES_HPP_
#define FAVA_TESTS_FIXTURES_HPP_

#include <vector>

#include "fava/bestrq.hpp"
#include "fava/model.hpp"
#include "fava/rnnt.hpp"

namespace fava::fixture {

inline MatrixF random_features(Eigen::Index T, int dim, Rng& rng) {
  MatrixF m(T, dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  return m;
}

inline MatrixF random_video(Eigen::Index frames, const model::ModelConfig& cfg, Rng& rng) {
  MatrixF m(frames, static_cast<Eigen::Index>(cfg.video_height) * cfg.video_width * 3);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  return m;
}

inline model::Components all_components() {
  return {model::kAudioFrontend, model::kVideoFrontend, model::kEncoder,
          model::kMlmHead,       model::kPredictor,     model::kJoiner};
}

// Transducer loss plus masked-prediction loss over a single AV utterance,
// touching every parameter root.
struct FullLossInputs {
  MatrixF features;
  MatrixF video;
  std::vector<int> labels;
  bestrq::TargetSequence targets;
  model::ModalityDecision decision = model::ModalityDecision::kBoth;
};

inline FullLossInputs make_full_loss_inputs(const model::ModelConfig& cfg, uint64_t seed, Eigen::Index frames = 16) {
  Rng rng(seed, "fixture/full_loss");
  FullLossInputs in;
  in.features = random_features(frames, cfg.feature_dim, rng);
  const Eigen::Index T = (frames + 3) / 4;
  in.video = random_video(T, cfg, rng);
  in.labels = {3, 5};
  for (Eigen::Index i = 0; i < T; ++i) {
    in.targets.labels.push_back(static_cast<int>(rng.uniform_int(cfg.codebook_size)));
    in.targets.target_mask.push_back(i % 2 == 0);
  }
  return in;
}

template <typename S>
ad::Var<S> full_loss(ad::Graph<S>& g, const model::ModelConfig& cfg, const ParameterTree<S>& params,
                     const FullLossInputs& in) {
  model::Context<S> c{g, cfg, params};
  model::Inputs mi{&in.features, &in.video, in.decision};
  auto enc = model::encode(c, mi);
  auto rnnt = rnnt::transducer_loss(c, enc, in.labels);
  auto logits = model::mlm_head(c, enc);
  auto m = bestrq::mlm_loss<S>(logits.value(), in.targets, g.recording());
  auto mlm = ad::loss_node(logits, m.loss, std::move(m.grad));
  return ad::add(rnnt, mlm);
}

}  // namespace fava::fixture

#endif  // FAVA_TESTS_FIXTURES_HPP_
