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

#ifndef FAVA_DATA_HPP_
#define FAVA_DATA_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fava/common.hpp"
#include "fava/dsp.hpp"
#include "fava/rnnt.hpp"

namespace fava::data {

// ---------------------------------------------------------------------------
// "FVT1" tensor container: magic, u8 rank, rank little-endian u32 dims,
// u8 dtype tag, then the raw row-major little-endian payload.

enum class DType : uint8_t { kU8 = 0, kF32 = 1, kF64 = 2, kI32 = 3 };

size_t dtype_size(DType t);

struct RawTensor {
  DType dtype = DType::kU8;
  std::vector<uint32_t> dims;
  std::vector<unsigned char> payload;

  size_t numel() const;
  bool operator==(const RawTensor&) const = default;
};

inline constexpr size_t kMaxRank = 4;

size_t header_size(size_t rank);
std::vector<unsigned char> encode_tensor(const RawTensor& t);
RawTensor decode_tensor(std::span<const unsigned char> bytes);
void write_tensor(const std::filesystem::path& path, const RawTensor& t);
RawTensor read_tensor(const std::filesystem::path& path);

RawTensor make_u8(std::vector<uint32_t> dims, std::vector<uint8_t> values);
RawTensor make_f32(std::vector<uint32_t> dims, std::span<const float> values);
std::vector<float> to_f32(const RawTensor& t);

// ---------------------------------------------------------------------------
// Video: frames at 25 Hz, one row per frame laid out (h, w, rgb).

inline constexpr int kVideoRate = 25;

inline float pixel_to_unit(uint8_t x) { return static_cast<float>(x) / 127.5f - 1.0f; }
uint8_t unit_to_pixel(float v);

struct VideoSequence {
  int height = 0;
  int width = 0;
  MatrixF frames;  // num_frames x (height * width * 3), values in [-1, 1]

  int num_frames() const { return static_cast<int>(frames.rows()); }
};

VideoSequence video_from_tensor(const RawTensor& t);
RawTensor video_to_tensor(const VideoSequence& v);

// ---------------------------------------------------------------------------
// Synthetic paired corpus.

struct CorpusSpec {
  int num_pretrain = 800;
  int num_train = 400;
  int num_dev = 60;
  int num_test = 100;
  int min_symbols = 3;
  int max_symbols = 8;
  int vocab_size = 16;
  uint64_t seed = 7;
  int video_height = 32;
  int video_width = 32;
  int symbol_ms = 100;
  double amplitude = 0.3;
  double noise_seconds = 5.0;
  int babble_k = 30;
  // Successors allowed after each symbol; vocab_size gives i.i.d. symbols.
  int grammar_branching = 4;

  void validate() const;
};

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> names = {"pretrain", "train", "dev", "test"};
  return names;
}

struct ManifestRecord {
  std::string id;
  std::string audio_path;  // relative to the manifest's directory
  std::string video_path;
  std::string transcript;  // space-separated symbols
  double duration_s = 0.0;
  std::string split;
};

std::string to_line(const ManifestRecord& r);
ManifestRecord parse_manifest_line(const std::string& line);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

// Symbol sequence of the given length: uniform first symbol, then each
// successor is prev + offset (mod vocab) with the offset drawn uniformly
// from grammar_offsets(). Every position is marginally uniform.
std::vector<int> grammar_offsets(const CorpusSpec& spec);
std::vector<int> sample_symbols(const CorpusSpec& spec, int length, Rng& rng);

// The two chord frequencies (Hz) of every symbol; all 2 * vocab_size tones
// are distinct and mel-spaced.
std::vector<std::pair<double, double>> symbol_tones(int vocab_size);

// 100 ms chord with short raised-cosine edges.
Eigen::VectorXf symbol_signature(const CorpusSpec& spec, int symbol);

// One frame (h, w, rgb) of the mouth rendering for `symbol`; `parity`
// alternates with the symbol position so consecutive repeats stay visible.
std::vector<uint8_t> render_mouth(const CorpusSpec& spec, int symbol, int parity);

// Index of the symbol shown in video frame k (the symbol active at the
// frame's start time).
int symbol_at_frame(const CorpusSpec& spec, int frame, int num_symbols);

struct SyntheticUtterance {
  std::vector<int> symbols;  // 0-based symbol indices
  dsp::Waveform audio;
  RawTensor video;  // frames x H x W x 3, u8
};

SyntheticUtterance synthesize(const CorpusSpec& spec, const std::vector<int>& symbols);

// Writes <out>/<split>/{manifest.txt,audio/,video/}, <out>/feature_stats.fvt
// and <out>/noise/{cafe,music,babble_eval}.wav. Deterministic in spec.seed.
void generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir);

dsp::Waveform cafe_noise(double seconds, Rng& rng);
dsp::Waveform music_noise(double seconds, Rng& rng);

struct Example {
  std::string id;
  dsp::Waveform audio;
  VideoSequence video;
  std::string transcript;
  std::vector<int> labels;
  double duration_s = 0.0;
};

// Errors name the record id.
Example load_example(const ManifestRecord& rec, const std::filesystem::path& split_dir,
                     const rnnt::Vocabulary& vocab);

struct FeatureStats {
  RowVector<float> mean;
  RowVector<float> stdev;

  MatrixF normalize(const MatrixF& frames) const;
};

FeatureStats compute_feature_stats(const std::vector<dsp::Waveform>& waves, const dsp::MelConfig& mel = {});
void write_feature_stats(const std::filesystem::path& path, const FeatureStats& s);
FeatureStats read_feature_stats(const std::filesystem::path& path);

// A split loaded fully into memory.
struct Split {
  std::string name;
  std::vector<Example> examples;
};

Split load_split(const std::filesystem::path& corpus_dir, const std::string& split, const rnnt::Vocabulary& vocab,
                 int limit = -1);

rnnt::Vocabulary corpus_vocabulary(const CorpusSpec& spec);

}  // namespace fava::data

#endif  // FAVA_DATA_HPP_
