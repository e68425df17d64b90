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

#ifndef FAVA_MODEL_HPP_
#define FAVA_MODEL_HPP_

#include <atomic>
#include <cmath>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "fava/autodiff.hpp"
#include "fava/common.hpp"
#include "fava/params.hpp"

namespace fava::model {

enum class Preset { kPaper, kDesk };

std::string to_string(Preset p);
Preset preset_from_string(const std::string& s);

// Every architectural size in one place. Front-end, encoder and decoder
// shapes are all derived from it.
struct ModelConfig {
  Preset preset = Preset::kDesk;
  int feature_dim = 80;
  int d_model = 64;
  int num_layers = 2;
  int num_heads = 4;
  int ffn_dim = 256;
  int conv_kernel = 7;
  int rel_pos_max = 32;
  int audio_conv1_channels = 16;
  int audio_conv2_channels = 16;
  int video_height = 32;
  int video_width = 32;
  std::vector<int> video_channels = {4, 8, 16, 32, 64};
  int codebook_size = 256;
  int vocab_size = 17;
  int pred_embed = 32;
  int pred_hidden = 64;
  int pred_layers = 2;
  int joiner_hidden = 64;

  static ModelConfig paper();
  static ModelConfig desk();
  static ModelConfig for_preset(Preset p) { return p == Preset::kPaper ? paper() : desk(); }

  // Frequency bins left after the two stride-2 convolutions (80 -> 40 -> 20).
  int audio_freq_out() const { return (((feature_dim + 1) / 2) + 1) / 2; }
  void validate() const;
};

inline constexpr const char* kAudioFrontend = "audio_frontend";
inline constexpr const char* kVideoFrontend = "video_frontend";
inline constexpr const char* kEncoder = "encoder";
inline constexpr const char* kMlmHead = "mlm_head";
inline constexpr const char* kPredictor = "predictor";
inline constexpr const char* kJoiner = "joiner";

using Components = std::set<std::string>;

// kReluWeight: He-uniform, for convolutions followed by a ReLU.
// kOutput: a tenth of kWeight, so fresh classifier heads start near uniform.
enum class InitKind { kWeight, kReluWeight, kOutput, kBias, kGain, kZero, kEmbedding };

struct ParamSpec {
  std::string name;
  std::vector<int64_t> shape;
  InitKind init = InitKind::kWeight;
};

// Names and shapes of every tensor for the requested roots, without
// allocating anything (the paper preset is large).
std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg, const Components& components);
int64_t count_parameters(const ModelConfig& cfg, const Components& components);

// Fan-in scaled uniform weights, zero biases, unit norm gains. Each tensor
// draws from its own substream keyed by (seed, name), so a tensor's initial
// value does not depend on which other roots are present.
ParameterTree<float> init_params(const ModelConfig& cfg, const Components& components, uint64_t seed);

// Line-delimited name / shape / count table followed by per-root totals.
void write_introspection(std::ostream& os, const ParameterTree<float>& params);

enum class ModalityDecision { kBoth, kAudioOnly, kVideoOnly };

std::string to_string(ModalityDecision d);

// P(both) = 0.5, P(video zeroed) = 0.25, P(audio zeroed) = 0.25.
ModalityDecision sample_modality_dropout(Rng& rng);

// ---------------------------------------------------------------------------
// Forward graph builders.

template <typename S>
struct Context {
  ad::Graph<S>& g;
  const ModelConfig& cfg;
  const ParameterTree<S>& params;

  ad::Var<S> p(const std::string& name) const { return g.param(name, params.value(name)); }
};

// T x 80 log-mel at 100 Hz -> ceil(T/4) x d_model at 25 Hz.
template <typename S>
ad::Var<S> audio_frontend(const Context<S>& c, const ad::Var<S>& feats) {
  const Eigen::Index T = feats.rows();
  const int F = c.cfg.feature_dim;
  if (feats.cols() != F) throw Error("audio_frontend: feature dim mismatch");
  if (T == 0) return c.g.constant(Matrix<S>::Zero(0, c.cfg.d_model));
  ad::Conv2dShape s1{1, T, F, 3, 3, 2, 2};
  auto x = ad::reshape(feats, T * F, 1);
  x = ad::relu(ad::conv2d(x, s1, c.p("audio_frontend/conv1/w"), c.p("audio_frontend/conv1/b")));
  ad::Conv2dShape s2{1, s1.out_h(), s1.out_w(), 3, 3, 2, 2};
  x = ad::relu(ad::conv2d(x, s2, c.p("audio_frontend/conv2/w"), c.p("audio_frontend/conv2/b")));
  x = ad::reshape(x, s2.out_h(), s2.out_w() * x.cols());
  return ad::linear(x, c.p("audio_frontend/proj/w"), c.p("audio_frontend/proj/b"));
}

// Video rows are (t, h, w) with 3 colour columns, values in [-1, 1].
// Five (spatial 1x3x3 stride 2, temporal 3x1x1) pairs, then a spatial mean.
template <typename S>
ad::Var<S> video_frontend(const Context<S>& c, const ad::Var<S>& video, Eigen::Index frames) {
  const Eigen::Index H = c.cfg.video_height, W = c.cfg.video_width;
  if (video.cols() != 3 || video.rows() != frames * H * W) throw Error("video_frontend: wrong resolution");
  if (frames == 0) return c.g.constant(Matrix<S>::Zero(0, c.cfg.d_model));
  auto x = video;
  Eigen::Index h = H, w = W;
  for (size_t i = 0; i < c.cfg.video_channels.size(); ++i) {
    const std::string stage = "video_frontend/stage" + std::to_string(i);
    ad::Conv2dShape spatial{frames, h, w, 3, 3, 2, 2};
    x = ad::relu(ad::conv2d(x, spatial, c.p(stage + "/spatial/w"), c.p(stage + "/spatial/b")));
    h = spatial.out_h();
    w = spatial.out_w();
    ad::Conv2dShape temporal{1, frames, h * w, 3, 1, 1, 1};
    x = ad::relu(ad::conv2d(x, temporal, c.p(stage + "/temporal/w"), c.p(stage + "/temporal/b")));
  }
  return ad::mean_pool_groups(x, frames);
}

// Process-wide count of fuse() calls that truncated a one-frame mismatch.
std::atomic<int>& fuse_truncations();

// Additive early fusion. An absent stream (invalid Var) is treated as the
// zeroed modality; audio-only models pass no video and bypass the sum.
template <typename S>
ad::Var<S> fuse(ad::Var<S> audio, ad::Var<S> video, ModalityDecision decision) {
  if (!video.valid() || decision == ModalityDecision::kAudioOnly) {
    if (!audio.valid()) throw Error("fuse: no audio stream");
    return audio;
  }
  if (!audio.valid() || decision == ModalityDecision::kVideoOnly) return video;
  const Eigen::Index ta = audio.rows(), tv = video.rows();
  if (audio.cols() != video.cols()) throw Error("fuse: feature dim mismatch");
  if (ta != tv) {
    if (std::abs(ta - tv) > 1) throw Error("fuse: audio/video length mismatch exceeds one frame");
    ++fuse_truncations();
    const Eigen::Index t = std::min(ta, tv);
    audio = ad::slice_rows(audio, 0, t);
    video = ad::slice_rows(video, 0, t);
  }
  return ad::add(audio, video);
}

template <typename S>
ad::Var<S> feed_forward(const Context<S>& c, const std::string& pre, const ad::Var<S>& x) {
  auto h = ad::layer_norm(x, c.p(pre + "/ln_g"), c.p(pre + "/ln_b"));
  h = ad::swish(ad::linear(h, c.p(pre + "/w1"), c.p(pre + "/b1")));
  return ad::linear(h, c.p(pre + "/w2"), c.p(pre + "/b2"));
}

template <typename S>
ad::Var<S> self_attention(const Context<S>& c, const std::string& pre, const ad::Var<S>& x, Eigen::Index valid) {
  const Eigen::Index T = x.rows();
  const int heads = c.cfg.num_heads;
  const Eigen::Index dh = c.cfg.d_model / heads;
  auto h = ad::layer_norm(x, c.p(pre + "/ln_g"), c.p(pre + "/ln_b"));
  auto q = ad::linear(h, c.p(pre + "/wq"), c.p(pre + "/bq"));
  auto k = ad::linear(h, c.p(pre + "/wk"), c.p(pre + "/bk"));
  auto v = ad::linear(h, c.p(pre + "/wv"), c.p(pre + "/bv"));
  auto table = c.p(pre + "/rel_bias");
  const S inv_sqrt = S(1) / std::sqrt(S(dh));
  std::vector<ad::Var<S>> outs;
  for (int i = 0; i < heads; ++i) {
    auto qh = ad::slice_cols(q, i * dh, dh);
    auto kh = ad::slice_cols(k, i * dh, dh);
    auto vh = ad::slice_cols(v, i * dh, dh);
    auto scores = ad::add(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt), ad::relative_bias(ad::slice_rows(table, i, 1), T));
    outs.push_back(ad::matmul(ad::softmax_rows(scores, valid), vh));
  }
  return ad::linear(ad::concat_cols(outs), c.p(pre + "/wo"), c.p(pre + "/bo"));
}

template <typename S>
ad::Var<S> conv_module(const Context<S>& c, const std::string& pre, const ad::Var<S>& x, Eigen::Index valid) {
  auto h = ad::layer_norm(x, c.p(pre + "/ln_g"), c.p(pre + "/ln_b"));
  h = ad::glu(ad::linear(h, c.p(pre + "/pw1_w"), c.p(pre + "/pw1_b")));
  h = ad::mask_rows(h, valid);
  h = ad::depthwise_conv1d(h, c.p(pre + "/dw_w"), c.p(pre + "/dw_b"));
  h = ad::swish(ad::layer_norm(h, c.p(pre + "/ln2_g"), c.p(pre + "/ln2_b")));
  return ad::linear(h, c.p(pre + "/pw2_w"), c.p(pre + "/pw2_b"));
}

template <typename S>
ad::Var<S> conformer_block(const Context<S>& c, const std::string& pre, ad::Var<S> x, Eigen::Index valid) {
  x = ad::add(x, ad::scale(feed_forward(c, pre + "/ffn1", x), S(0.5)));
  x = ad::add(x, self_attention(c, pre + "/mhsa", x, valid));
  x = ad::add(x, conv_module(c, pre + "/conv", x, valid));
  x = ad::add(x, ad::scale(feed_forward(c, pre + "/ffn2", x), S(0.5)));
  return ad::layer_norm(x, c.p(pre + "/ln_g"), c.p(pre + "/ln_b"));
}

// Frames at or beyond `valid` are padding: they are excluded from attention
// and zeroed before the depthwise convolution.
template <typename S>
ad::Var<S> encoder(const Context<S>& c, ad::Var<S> x, Eigen::Index valid = -1) {
  if (x.rows() == 0) return x;
  if (valid < 0 || valid > x.rows()) valid = x.rows();
  for (int i = 0; i < c.cfg.num_layers; ++i) {
    x = conformer_block(c, "encoder/layer" + std::to_string(i), x, valid);
  }
  return x;
}

template <typename S>
ad::Var<S> mlm_head(const Context<S>& c, const ad::Var<S>& encoded) {
  return ad::linear(encoded, c.p("mlm_head/w"), c.p("mlm_head/b"));
}

// Model inputs for one utterance.
struct Inputs {
  const MatrixF* features = nullptr;  // T x 80, normalized log-mel
  const MatrixF* video = nullptr;     // frames x (H * W * 3); null for audio-only models
  ModalityDecision decision = ModalityDecision::kBoth;
};

// Front-ends + fusion + encoder. Zeroed modalities are never computed, so
// their parameters receive no gradient.
template <typename S>
ad::Var<S> encode(const Context<S>& c, const Inputs& in) {
  if (!in.features) throw Error("encode: missing audio features");
  const bool use_video = in.video != nullptr && c.params.has_root(kVideoFrontend);
  ad::Var<S> audio, video;
  if (!use_video || in.decision != ModalityDecision::kVideoOnly) {
    audio = audio_frontend(c, c.g.constant(in.features->template cast<S>()));
  }
  if (use_video && in.decision != ModalityDecision::kAudioOnly) {
    const Eigen::Index frames = in.video->rows();
    Matrix<S> v = Eigen::Map<const MatrixF>(in.video->data(), frames * c.cfg.video_height * c.cfg.video_width, 3)
                      .template cast<S>();
    video = video_frontend(c, c.g.constant(std::move(v)), frames);
  }
  return encoder(c, fuse(audio, video, use_video ? in.decision : ModalityDecision::kAudioOnly));
}

// Plain (no gradient) convenience wrappers.
template <typename S>
Matrix<S> audio_frontend_forward(const MatrixF& feats, const ModelConfig& cfg, const ParameterTree<S>& params) {
  ad::Graph<S> g(false);
  Context<S> c{g, cfg, params};
  return audio_frontend(c, g.constant(feats.cast<S>())).value();
}

template <typename S>
Matrix<S> video_frontend_forward(const MatrixF& video, const ModelConfig& cfg, const ParameterTree<S>& params) {
  ad::Graph<S> g(false);
  Context<S> c{g, cfg, params};
  if (video.cols() != static_cast<Eigen::Index>(cfg.video_height) * cfg.video_width * 3)
    throw Error("video_frontend: wrong resolution");
  Matrix<S> v = Eigen::Map<const MatrixF>(video.data(), video.rows() * cfg.video_height * cfg.video_width, 3)
                    .template cast<S>();
  return video_frontend(c, g.constant(std::move(v)), video.rows()).value();
}

template <typename S>
Matrix<S> encoder_forward(const Matrix<S>& fused, const ModelConfig& cfg, const ParameterTree<S>& params,
                          Eigen::Index valid = -1) {
  ad::Graph<S> g(false);
  Context<S> c{g, cfg, params};
  return encoder(c, g.constant(fused), valid).value();
}

template <typename S>
Matrix<S> encode_forward(const Inputs& in, const ModelConfig& cfg, const ParameterTree<S>& params) {
  ad::Graph<S> g(false);
  Context<S> c{g, cfg, params};
  return encode(c, in).value();
}

}  // namespace fava::model

#endif  // FAVA_MODEL_HPP_
