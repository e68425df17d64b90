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

#ifndef FAVA_DSP_HPP_
#define FAVA_DSP_HPP_

#include <filesystem>
#include <span>
#include <vector>

#include "fava/common.hpp"

namespace fava::dsp {

inline constexpr int kSampleRate = 16000;
inline constexpr int kFrameRate = 100;

struct Waveform {
  Eigen::VectorXf samples;
  int sample_rate = kSampleRate;

  Eigen::Index size() const { return samples.size(); }
  double power() const;
};

// Time-major log-mel features, one row per 10 ms frame.
struct FeatureSequence {
  MatrixF frames;
  int frame_rate = kFrameRate;

  Eigen::Index num_frames() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
};

struct MelConfig {
  double window_ms = 25.0;
  double stride_ms = 10.0;
  int num_mels = 80;
  int fft_size = 512;
  double mel_low = 125.0;
  double mel_high = 7500.0;
  double log_floor = 1e-10;
  int sample_rate = kSampleRate;

  int window_samples() const { return static_cast<int>(window_ms * sample_rate / 1000.0 + 0.5); }
  int stride_samples() const { return static_cast<int>(stride_ms * sample_rate / 1000.0 + 0.5); }
  void validate() const;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// (fft_size/2 + 1) x num_mels matrix of triangular filters.
MatrixF mel_filterbank(const MelConfig& cfg);
// Center frequency (Hz) of every mel filter.
std::vector<double> mel_center_frequencies(const MelConfig& cfg);

// Number of frames produced for a signal of the given length (no padding).
Eigen::Index num_frames(Eigen::Index num_samples, const MelConfig& cfg);

FeatureSequence compute_logmel(const Waveform& wave, const MelConfig& cfg = {});

// Noise tiled (circularly, from a random offset) or cropped to `length`.
Waveform noise_segment(const Waveform& noise, Eigen::Index length, Rng& rng);

// Gain applied to `noise` so that clean/noise power ratio equals snr_db.
double snr_scale(const Waveform& clean, const Waveform& noise, double snr_db);

struct Mixture {
  Waveform mixed;
  Waveform scaled_noise;
  double noise_scale = 0.0;
  bool renormalized = false;
};

Mixture mix_at_snr_detailed(const Waveform& clean, const Waveform& noise, double snr_db, Rng& rng);
Waveform mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db, Rng& rng);

// Sum of k randomly chosen pool entries at random circular offsets, scaled
// to unit RMS. The result is a noise source and is not bounded to [-1, 1].
Waveform make_babble(std::span<const Waveform> utterances, int k, Rng& rng);

struct SpecAugmentConfig {
  int num_freq_masks = 2;
  int max_freq_width = 27;
  int num_time_masks = 2;
  double max_time_ratio = 0.05;
};

void fill_freq_band(MatrixF& frames, Eigen::Index first, Eigen::Index width, float value);
void fill_time_span(MatrixF& frames, Eigen::Index first, Eigen::Index width, float value);

FeatureSequence spec_augment(const FeatureSequence& feat, const SpecAugmentConfig& cfg, Rng& rng);

// Mono 16-bit PCM RIFF/WAVE.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& wave);

}  // namespace fava::dsp

#endif  // FAVA_DSP_HPP_
