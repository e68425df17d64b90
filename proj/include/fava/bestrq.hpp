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

#ifndef FAVA_BESTRQ_HPP_
#define FAVA_BESTRQ_HPP_

#include <cmath>
#include <utility>
#include <vector>

#include "fava/common.hpp"
#include "fava/dsp.hpp"

namespace fava::bestrq {

inline constexpr int kStack = 4;

// Frozen random-projection quantizer. Never touched by the optimizer; the
// whole object is a function of (seed, dims) plus the frozen input
// normalization statistics.
struct RandomQuantizer {
  uint64_t seed = 0;
  int input_dim = 320;
  int code_dim = 16;
  int codebook_size = 8192;
  MatrixF projection;  // input_dim x code_dim
  MatrixF codebook;    // codebook_size x code_dim, unit-norm rows
  RowVector<float> input_mean;
  RowVector<float> input_std;
};

RandomQuantizer init_quantizer(uint64_t seed, int input_dim = 320, int code_dim = 16, int codebook_size = 8192);

// Installs per-feature statistics (one entry per log-mel bin), tiled across
// the stacked frames.
void set_normalization(RandomQuantizer& q, const RowVector<float>& feature_mean,
                       const RowVector<float>& feature_std);

// Row i is the concatenation of frames 4i..4i+3; a trailing remainder is dropped.
MatrixF stack_frames(const MatrixF& frames);

// Nearest codebook row (cosine) of the normalized projection; ties go to the
// lowest index, so a zero projection maps to label 0.
std::vector<int> quantize(const RandomQuantizer& q, const MatrixF& stacked);

struct MaskSpec {
  std::vector<std::pair<int, int>> spans;  // (start, length), length clipped at num_frames
  int num_frames = 0;

  std::vector<bool> frame_mask() const;
};

MaskSpec sample_mask(int num_frames, double start_prob, int span, Rng& rng);

// Masked frames become i.i.d. N(0, fill_std^2); other frames are untouched.
dsp::FeatureSequence apply_audio_mask(const dsp::FeatureSequence& feat, const MaskSpec& mask, Rng& rng,
                                      double fill_std = 0.1);

// Position i at the 25 Hz rate is a target iff frames 4i..4i+3 are all masked.
std::vector<bool> mask_at_target_rate(const MaskSpec& mask);

struct TargetSequence {
  std::vector<int> labels;
  std::vector<bool> target_mask;

  size_t size() const { return labels.size(); }
  int num_targets() const;
};

// video: one row per frame. Each masked frame is replaced by a uniformly
// drawn frame of the same (unmasked) input.
MatrixF apply_video_mask(const MatrixF& video, const std::vector<bool>& mask, Rng& rng);

template <typename Scalar>
struct MlmLoss {
  Scalar loss = 0;
  bool empty = true;
  int num_targets = 0;
  int num_correct = 0;
  Matrix<Scalar> grad;  // d loss / d logits, filled on request
};

// Mean cross-entropy over positions flagged in targets.target_mask. A step
// with no flagged position returns loss 0 and empty = true.
template <typename Scalar>
MlmLoss<Scalar> mlm_loss(const Matrix<Scalar>& logits, const TargetSequence& targets, bool with_grad = false) {
  if (logits.rows() != static_cast<Eigen::Index>(targets.size()) || targets.target_mask.size() != targets.size())
    throw Error("mlm_loss: shape mismatch");
  MlmLoss<Scalar> out;
  if (with_grad) out.grad = Matrix<Scalar>::Zero(logits.rows(), logits.cols());
  out.num_targets = targets.num_targets();
  out.empty = out.num_targets == 0;
  if (out.empty) return out;
  const Scalar inv = Scalar(1) / Scalar(out.num_targets);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (!targets.target_mask[i]) continue;
    const int label = targets.labels[i];
    if (label < 0 || label >= logits.cols()) throw Error("mlm_loss: label out of range");
    Eigen::Index best;
    const Scalar mx = logits.row(i).maxCoeff(&best);
    const Scalar lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.loss += (lse - logits(i, label)) * inv;
    if (best == label) ++out.num_correct;
    if (with_grad) {
      out.grad.row(i) = (logits.row(i).array() - lse).exp() * inv;
      out.grad(i, label) -= inv;
    }
  }
  return out;
}

}  // namespace fava::bestrq

#endif  // FAVA_BESTRQ_HPP_
