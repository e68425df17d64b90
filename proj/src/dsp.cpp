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

#include "fava/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include <unsupported/Eigen/FFT>

namespace fava::dsp {

double Waveform::power() const {
  if (samples.size() == 0) return 0.0;
  return samples.cast<double>().squaredNorm() / static_cast<double>(samples.size());
}

void MelConfig::validate() const {
  if (window_ms <= 0 || stride_ms <= 0 || num_mels <= 0) throw Error("mel config: non-positive size");
  if (fft_size < window_samples()) throw Error("mel config: fft_size smaller than window");
  if (!(mel_low >= 0 && mel_low < mel_high && mel_high <= sample_rate / 2.0))
    throw Error("mel config: invalid mel range");
  if (!(log_floor > 0)) throw Error("mel config: log_floor must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.mel_low);
  const double hi = hz_to_mel(cfg.mel_high);
  std::vector<double> edges(cfg.num_mels + 2);
  for (int i = 0; i < cfg.num_mels + 2; ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * i / (cfg.num_mels + 1));
  }
  return edges;
}

}  // namespace

std::vector<double> mel_center_frequencies(const MelConfig& cfg) {
  auto edges = mel_edges(cfg);
  return {edges.begin() + 1, edges.end() - 1};
}

MatrixF mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const int bins = cfg.fft_size / 2 + 1;
  const auto edges = mel_edges(cfg);
  MatrixF fb = MatrixF::Zero(bins, cfg.num_mels);
  for (int k = 0; k < bins; ++k) {
    const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
    for (int m = 0; m < cfg.num_mels; ++m) {
      const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      fb(k, m) = static_cast<float>(w);
    }
  }
  return fb;
}

Eigen::Index num_frames(Eigen::Index num_samples, const MelConfig& cfg) {
  const int win = cfg.window_samples();
  if (num_samples < win) return 0;
  return (num_samples - win) / cfg.stride_samples() + 1;
}

FeatureSequence compute_logmel(const Waveform& wave, const MelConfig& cfg) {
  cfg.validate();
  if (wave.sample_rate != cfg.sample_rate) throw Error("compute_logmel: sample rate mismatch");
  const int win = cfg.window_samples();
  const int stride = cfg.stride_samples();
  if (wave.size() == 0 || wave.size() < win) throw Error("utterance too short");
  const Eigen::Index frames = num_frames(wave.size(), cfg);
  const int bins = cfg.fft_size / 2 + 1;

  std::vector<double> window(win);
  for (int i = 0; i < win; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);
  }

  Eigen::FFT<double> fft;
  std::vector<double> buffer(cfg.fft_size, 0.0);
  std::vector<std::complex<double>> spectrum;
  MatrixD power(frames, bins);
  for (Eigen::Index t = 0; t < frames; ++t) {
    std::fill(buffer.begin(), buffer.end(), 0.0);
    const Eigen::Index start = t * stride;
    for (int i = 0; i < win; ++i) buffer[i] = window[i] * wave.samples[start + i];
    fft.fwd(spectrum, buffer);
    for (int k = 0; k < bins; ++k) power(t, k) = std::norm(spectrum[k]);
  }

  const MatrixD energies = power * mel_filterbank(cfg).cast<double>();
  FeatureSequence out;
  out.frame_rate = static_cast<int>(1000.0 / cfg.stride_ms + 0.5);
  out.frames = energies.unaryExpr([&](double e) {
    return static_cast<float>(std::log(std::max(e, cfg.log_floor)));
  });
  return out;
}

Waveform noise_segment(const Waveform& noise, Eigen::Index length, Rng& rng) {
  if (noise.size() == 0) throw Error("silent noise source");
  Waveform seg;
  seg.sample_rate = noise.sample_rate;
  seg.samples.resize(length);
  const Eigen::Index offset = rng.uniform_int(noise.size());
  for (Eigen::Index i = 0; i < length; ++i) {
    seg.samples[i] = noise.samples[(offset + i) % noise.size()];
  }
  return seg;
}

double snr_scale(const Waveform& clean, const Waveform& noise, double snr_db) {
  const double pc = clean.power();
  const double pn = noise.power();
  if (!(pn > 0.0)) throw Error("silent noise source");
  if (!(pc > 0.0)) throw Error("silent utterance");
  return std::sqrt(pc / (pn * std::pow(10.0, snr_db / 10.0)));
}

Mixture mix_at_snr_detailed(const Waveform& clean, const Waveform& noise, double snr_db, Rng& rng) {
  if (!(noise.power() > 0.0)) throw Error("silent noise source");
  if (!(clean.power() > 0.0)) throw Error("silent utterance");
  Mixture m;
  Waveform seg = noise_segment(noise, clean.size(), rng);
  // A cropped window of a non-silent source can itself be silent.
  if (!(seg.power() > 0.0)) throw Error("silent noise source");
  m.noise_scale = snr_scale(clean, seg, snr_db);
  m.scaled_noise.sample_rate = clean.sample_rate;
  m.scaled_noise.samples = (seg.samples.cast<double>() * m.noise_scale).cast<float>();
  m.mixed.sample_rate = clean.sample_rate;
  m.mixed.samples = clean.samples + m.scaled_noise.samples;
  const float peak = m.mixed.samples.cwiseAbs().maxCoeff();
  if (peak > 1.0f) {
    m.mixed.samples /= peak;
    m.renormalized = true;
  }
  return m;
}

Waveform mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db, Rng& rng) {
  return mix_at_snr_detailed(clean, noise, snr_db, rng).mixed;
}

Waveform make_babble(std::span<const Waveform> utterances, int k, Rng& rng) {
  if (k < 2) throw Error("make_babble: k must be at least 2");
  if (utterances.size() < static_cast<size_t>(k)) throw Error("make_babble: pool smaller than k");
  std::vector<size_t> order(utterances.size());
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < k; ++i) {
    const auto j = i + static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(order.size()) - i));
    std::swap(order[i], order[j]);
  }
  Eigen::Index length = 0;
  for (int i = 0; i < k; ++i) length = std::max(length, utterances[order[i]].size());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(length);
  for (int i = 0; i < k; ++i) {
    const Waveform& src = utterances[order[i]];
    if (src.size() == 0) continue;
    const Eigen::Index offset = rng.uniform_int(src.size());
    for (Eigen::Index n = 0; n < length; ++n) sum[n] += src.samples[(offset + n) % src.size()];
  }
  const double rms = std::sqrt(sum.squaredNorm() / std::max<Eigen::Index>(length, 1));
  if (!(rms > 0.0)) throw Error("make_babble: silent mixture");
  Waveform out;
  out.sample_rate = utterances[order[0]].sample_rate;
  out.samples = (sum / rms).cast<float>();
  return out;
}

void fill_freq_band(MatrixF& frames, Eigen::Index first, Eigen::Index width, float value) {
  if (width <= 0) return;
  frames.middleCols(first, width).setConstant(value);
}

void fill_time_span(MatrixF& frames, Eigen::Index first, Eigen::Index width, float value) {
  if (width <= 0) return;
  frames.middleRows(first, width).setConstant(value);
}

FeatureSequence spec_augment(const FeatureSequence& feat, const SpecAugmentConfig& cfg, Rng& rng) {
  FeatureSequence out = feat;
  const Eigen::Index rows = feat.frames.rows();
  const Eigen::Index dims = feat.frames.cols();
  if (rows == 0 || dims == 0) return out;
  const float fill = static_cast<float>(feat.frames.cast<double>().mean());
  const Eigen::Index max_f = std::min<Eigen::Index>(cfg.max_freq_width, dims);
  for (int i = 0; i < cfg.num_freq_masks && max_f > 0; ++i) {
    const Eigen::Index w = rng.uniform_int(0, max_f);
    const Eigen::Index f0 = rng.uniform_int(0, dims - w);
    fill_freq_band(out.frames, f0, w, fill);
  }
  const Eigen::Index max_t = static_cast<Eigen::Index>(std::floor(cfg.max_time_ratio * rows));
  for (int i = 0; i < cfg.num_time_masks && max_t > 0; ++i) {
    const Eigen::Index w = rng.uniform_int(0, max_t);
    const Eigen::Index t0 = rng.uniform_int(0, rows - w);
    fill_time_span(out.frames, t0, w, fill);
  }
  return out;
}

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  unsigned char bytes[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

uint32_t le32(const unsigned char* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
uint16_t le16(const unsigned char* p) { return uint16_t(p[0] | p[1] << 8); }

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open wav: " + path.string());
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 12 || std::memcmp(data.data(), "RIFF", 4) != 0 || std::memcmp(data.data() + 8, "WAVE", 4) != 0)
    throw Error("not a RIFF/WAVE file: " + path.string());
  size_t pos = 12;
  bool have_fmt = false;
  Waveform wave;
  while (pos + 8 <= data.size()) {
    const uint32_t size = le32(&data[pos + 4]);
    const size_t body = pos + 8;
    if (body + size > data.size()) throw Error("truncated wav chunk: " + path.string());
    if (std::memcmp(&data[pos], "fmt ", 4) == 0) {
      if (size < 16) throw Error("bad fmt chunk: " + path.string());
      const uint16_t format = le16(&data[body]);
      const uint16_t channels = le16(&data[body + 2]);
      const uint32_t rate = le32(&data[body + 4]);
      const uint16_t bits = le16(&data[body + 14]);
      if (format != 1 || channels != 1 || bits != 16)
        throw Error("unsupported wav (need mono 16-bit PCM): " + path.string());
      wave.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (std::memcmp(&data[pos], "data", 4) == 0) {
      if (!have_fmt) throw Error("wav data before fmt: " + path.string());
      const size_t n = size / 2;
      wave.samples.resize(static_cast<Eigen::Index>(n));
      for (size_t i = 0; i < n; ++i) {
        const auto v = static_cast<int16_t>(le16(&data[body + 2 * i]));
        wave.samples[static_cast<Eigen::Index>(i)] = static_cast<float>(v) / 32767.0f;
      }
      return wave;
    }
    pos = body + size + (size & 1);
  }
  throw Error("wav has no data chunk: " + path.string());
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write wav: " + path.string());
  const uint32_t bytes = static_cast<uint32_t>(wave.size() * 2);
  os.write("RIFF", 4);
  put<uint32_t>(os, 36 + bytes);
  os.write("WAVEfmt ", 8);
  put<uint32_t>(os, 16);
  put<uint16_t>(os, 1);
  put<uint16_t>(os, 1);
  put<uint32_t>(os, static_cast<uint32_t>(wave.sample_rate));
  put<uint32_t>(os, static_cast<uint32_t>(wave.sample_rate * 2));
  put<uint16_t>(os, 2);
  put<uint16_t>(os, 16);
  os.write("data", 4);
  put<uint32_t>(os, bytes);
  for (Eigen::Index i = 0; i < wave.size(); ++i) {
    const float x = std::clamp(wave.samples[i], -1.0f, 1.0f);
    put<uint16_t>(os, static_cast<uint16_t>(static_cast<int16_t>(std::lround(x * 32767.0f))));
  }
}

}  // namespace fava::dsp
