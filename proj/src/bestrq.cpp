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

#include "fava/bestrq.hpp"

#include <algorithm>

namespace fava::bestrq {

RandomQuantizer init_quantizer(uint64_t seed, int input_dim, int code_dim, int codebook_size) {
  if (input_dim <= 0 || code_dim <= 0 || codebook_size <= 0) throw Error("init_quantizer: dims must be positive");
  RandomQuantizer q;
  q.seed = seed;
  q.input_dim = input_dim;
  q.code_dim = code_dim;
  q.codebook_size = codebook_size;
  const uint64_t pkey = derive_seed(seed, "bestrq/projection");
  const uint64_t ckey = derive_seed(seed, "bestrq/codebook");
  q.projection.resize(input_dim, code_dim);
  for (Eigen::Index i = 0; i < q.projection.size(); ++i) {
    q.projection.data()[i] = static_cast<float>(counter_normal(pkey, static_cast<uint64_t>(i)));
  }
  q.codebook.resize(codebook_size, code_dim);
  for (int r = 0; r < codebook_size; ++r) {
    Eigen::VectorXd row(code_dim);
    for (int c = 0; c < code_dim; ++c) row[c] = counter_normal(ckey, static_cast<uint64_t>(r) * code_dim + c);
    row /= row.norm();
    q.codebook.row(r) = row.cast<float>().transpose();
  }
  q.input_mean = RowVector<float>::Zero(input_dim);
  q.input_std = RowVector<float>::Ones(input_dim);
  return q;
}

void set_normalization(RandomQuantizer& q, const RowVector<float>& feature_mean,
                       const RowVector<float>& feature_std) {
  const Eigen::Index d = feature_mean.size();
  if (d == 0 || feature_std.size() != d || q.input_dim % d != 0)
    throw Error("set_normalization: statistics do not tile the quantizer input");
  for (Eigen::Index i = 0; i < q.input_dim; ++i) {
    q.input_mean[i] = feature_mean[i % d];
    q.input_std[i] = std::max(feature_std[i % d], 1e-5f);
  }
}

MatrixF stack_frames(const MatrixF& frames) {
  const Eigen::Index rows = frames.rows() / kStack;
  const Eigen::Index dim = frames.cols();
  MatrixF out(rows, dim * kStack);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (int j = 0; j < kStack; ++j) out.block(i, j * dim, 1, dim) = frames.row(i * kStack + j);
  }
  return out;
}

std::vector<int> quantize(const RandomQuantizer& q, const MatrixF& stacked) {
  if (stacked.cols() != q.input_dim) throw Error("quantize: stacked row dim does not match quantizer input");
  const MatrixD proj = q.projection.cast<double>();
  const MatrixD book = q.codebook.cast<double>();
  const Eigen::RowVectorXd mean = q.input_mean.cast<double>();
  const Eigen::RowVectorXd stdev = q.input_std.cast<double>();
  std::vector<int> labels(static_cast<size_t>(stacked.rows()));
  for (Eigen::Index r = 0; r < stacked.rows(); ++r) {
    const Eigen::RowVectorXd x = (stacked.row(r).cast<double>() - mean).cwiseQuotient(stdev);
    Eigen::RowVectorXd v = x * proj;
    const double n = v.norm();
    if (n > 0.0) v /= n;
    const Eigen::VectorXd scores = book * v.transpose();
    int best = 0;
    for (Eigen::Index c = 1; c < scores.size(); ++c) {
      if (scores[c] > scores[best]) best = static_cast<int>(c);
    }
    labels[static_cast<size_t>(r)] = best;
  }
  return labels;
}

std::vector<bool> MaskSpec::frame_mask() const {
  std::vector<bool> m(static_cast<size_t>(num_frames), false);
  for (const auto& [start, length] : spans) {
    for (int i = start; i < start + length && i < num_frames; ++i) m[static_cast<size_t>(i)] = true;
  }
  return m;
}

MaskSpec sample_mask(int num_frames, double start_prob, int span, Rng& rng) {
  if (num_frames < 1) throw Error("sample_mask: need at least one frame");
  MaskSpec m;
  m.num_frames = num_frames;
  for (int t = 0; t < num_frames; ++t) {
    if (rng.bernoulli(start_prob)) m.spans.emplace_back(t, std::min(span, num_frames - t));
  }
  return m;
}

dsp::FeatureSequence apply_audio_mask(const dsp::FeatureSequence& feat, const MaskSpec& mask, Rng& rng,
                                      double fill_std) {
  if (mask.num_frames != feat.num_frames()) throw Error("apply_audio_mask: mask length mismatch");
  dsp::FeatureSequence out = feat;
  const auto m = mask.frame_mask();
  for (Eigen::Index t = 0; t < out.frames.rows(); ++t) {
    if (!m[static_cast<size_t>(t)]) continue;
    for (Eigen::Index c = 0; c < out.frames.cols(); ++c) out.frames(t, c) = static_cast<float>(fill_std * rng.normal());
  }
  return out;
}

std::vector<bool> mask_at_target_rate(const MaskSpec& mask) {
  const auto m = mask.frame_mask();
  std::vector<bool> out(static_cast<size_t>(mask.num_frames / kStack), false);
  for (size_t i = 0; i < out.size(); ++i) {
    bool all = true;
    for (int j = 0; j < kStack; ++j) all = all && m[i * kStack + j];
    out[i] = all;
  }
  return out;
}

int TargetSequence::num_targets() const {
  return static_cast<int>(std::count(target_mask.begin(), target_mask.end(), true));
}

MatrixF apply_video_mask(const MatrixF& video, const std::vector<bool>& mask, Rng& rng) {
  if (static_cast<Eigen::Index>(mask.size()) != video.rows()) throw Error("apply_video_mask: mask length mismatch");
  MatrixF out = video;
  for (Eigen::Index t = 0; t < video.rows(); ++t) {
    if (!mask[static_cast<size_t>(t)]) continue;
    out.row(t) = video.row(rng.uniform_int(video.rows()));
  }
  return out;
}

}  // namespace fava::bestrq
