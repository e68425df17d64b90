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

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>

#include "fava/data.hpp"
#include "fava/dsp.hpp"

namespace fava::dsp {
namespace {

Waveform tone(double hz, double amplitude, Eigen::Index n) {
  Waveform w;
  w.samples.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    w.samples[i] = static_cast<float>(amplitude * std::sin(2 * std::numbers::pi * hz * i / kSampleRate));
  return w;
}

Waveform gaussian(Eigen::Index n, double stdev, Rng& rng) {
  Waveform w;
  w.samples.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) w.samples[i] = static_cast<float>(stdev * rng.normal());
  return w;
}

// Textbook O(N^2) power spectrum of a Hann-windowed frame, zero-padded to n_fft.
std::vector<double> naive_power(const Waveform& w, Eigen::Index start, int win, int n_fft) {
  std::vector<double> p(n_fft / 2 + 1);
  for (int k = 0; k <= n_fft / 2; ++k) {
    std::complex<double> acc = 0;
    for (int i = 0; i < win; ++i) {
      const double hann = 0.5 * (1 - std::cos(2 * std::numbers::pi * i / win));
      acc += hann * w.samples[start + i] * std::polar(1.0, -2 * std::numbers::pi * k * i / n_fft);
    }
    p[k] = std::norm(acc);
  }
  return p;
}

double htk_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }

// Independent triangular filter weight for FFT bin frequency f.
double tri_weight(double f, int m, const MelConfig& cfg) {
  const double lo = htk_mel(cfg.mel_low), hi = htk_mel(cfg.mel_high);
  auto edge = [&](int i) {
    const double mel = lo + (hi - lo) * i / (cfg.num_mels + 1);
    return 700.0 * (std::exp(mel / 1127.0) - 1.0);
  };
  const double l = edge(m), c = edge(m + 1), r = edge(m + 2);
  if (f > l && f <= c) return (f - l) / (c - l);
  if (f > c && f < r) return (r - f) / (r - c);
  return 0.0;
}

TEST(MelConfig, Validation) {
  MelConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.fft_size = 256;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.mel_high = 9000;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.log_floor = 0;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_EQ(MelConfig{}.window_samples(), 400);
  EXPECT_EQ(MelConfig{}.stride_samples(), 160);
}

TEST(ComputeLogmel, OneSecondGives98Frames) {
  Rng rng(1);
  const auto f = compute_logmel(gaussian(16000, 0.1, rng));
  EXPECT_EQ(f.num_frames(), 98);
  EXPECT_EQ(f.dim(), 80);
  EXPECT_EQ(f.frame_rate, 100);
}

TEST(ComputeLogmel, ClosedFormFrameCount) {
  Rng rng(2);
  for (Eigen::Index n : {400, 401, 559, 560, 561, 1234, 8000}) {
    const auto f = compute_logmel(gaussian(n, 0.1, rng));
    EXPECT_EQ(f.num_frames(), (n - 400) / 160 + 1) << n;
    EXPECT_GE(f.frames.minCoeff(), static_cast<float>(std::log(1e-10)));
    EXPECT_TRUE(f.frames.allFinite());
  }
}

TEST(ComputeLogmel, TooShortThrows) {
  Waveform w;
  w.samples = Eigen::VectorXf::Zero(399);
  EXPECT_THROW(compute_logmel(w), Error);
  EXPECT_THROW(compute_logmel(Waveform{}), Error);
}

TEST(ComputeLogmel, SilenceIsLogFloor) {
  Waveform w;
  w.samples = Eigen::VectorXf::Zero(3200);
  const auto f = compute_logmel(w);
  EXPECT_TRUE((f.frames.array() == static_cast<float>(std::log(1e-10))).all());
}

// Argmax bin of a frame computed with the naive reference pipeline.
int reference_argmax(const Waveform& w, Eigen::Index frame, const MelConfig& cfg) {
  const auto p = naive_power(w, frame * 160, 400, 512);
  int best = 0;
  double best_e = -1;
  for (int m = 0; m < cfg.num_mels; ++m) {
    double e = 0;
    for (size_t k = 0; k < p.size(); ++k) e += p[k] * tri_weight(k * 16000.0 / 512, m, cfg);
    if (e > best_e) best_e = e, best = m;
  }
  return best;
}

std::vector<double> reference_centers(const MelConfig& cfg) {
  const double lo = htk_mel(cfg.mel_low), hi = htk_mel(cfg.mel_high);
  std::vector<double> c;
  for (int m = 0; m < cfg.num_mels; ++m)
    c.push_back(700.0 * (std::exp((lo + (hi - lo) * (m + 1) / (cfg.num_mels + 1)) / 1127.0) - 1.0));
  return c;
}

TEST(ComputeLogmel, ToneArgmaxMatchesReference) {
  // 1 kHz sits almost midway between two centers (976 Hz and 1024 Hz), so
  // the winner is decided by spectral leakage; the reference pipeline
  // decides it, and it must be one of the two nearest centers.
  const MelConfig cfg;
  const auto centers = reference_centers(cfg);
  const Waveform w = tone(1000.0, 0.5, 16000);
  const auto f = compute_logmel(w, cfg);
  for (Eigen::Index t : {0, 17, 50, 97}) {
    Eigen::Index arg;
    f.frames.row(t).maxCoeff(&arg);
    EXPECT_EQ(arg, reference_argmax(w, t, cfg)) << "frame " << t;
    EXPECT_LT(std::abs(centers[arg] - 1000.0), 25.0);
  }
}

TEST(ComputeLogmel, ToneAtCenterPeaksInItsBin) {
  const MelConfig cfg;
  const auto centers = reference_centers(cfg);
  for (int m : {10, 24, 40, 60}) {
    const auto f = compute_logmel(tone(centers[m], 0.5, 4000), cfg);
    for (Eigen::Index t = 0; t < f.num_frames(); ++t) {
      Eigen::Index arg;
      f.frames.row(t).maxCoeff(&arg);
      EXPECT_EQ(arg, m) << "frame " << t;
    }
  }
}

TEST(ComputeLogmel, MatchesNaiveReference) {
  Rng rng(3);
  const Waveform w = gaussian(2000, 0.2, rng);
  const MelConfig cfg;
  const auto f = compute_logmel(w, cfg);
  for (Eigen::Index t : {0, 5, 9}) {
    const auto p = naive_power(w, t * 160, 400, 512);
    for (int m = 0; m < cfg.num_mels; m += 7) {
      double e = 0;
      for (size_t k = 0; k < p.size(); ++k) e += p[k] * tri_weight(k * 16000.0 / 512, m, cfg);
      EXPECT_NEAR(f.frames(t, m), std::log(std::max(e, 1e-10)), 1e-4) << t << "," << m;
    }
  }
}

TEST(MelFilterbank, CentersAreMonotoneAndInRange) {
  const auto c = mel_center_frequencies(MelConfig{});
  ASSERT_EQ(c.size(), 80u);
  EXPECT_GT(c.front(), 125.0);
  EXPECT_LT(c.back(), 7500.0);
  for (size_t i = 1; i < c.size(); ++i) EXPECT_GT(c[i], c[i - 1]);
  const auto fb = mel_filterbank(MelConfig{});
  EXPECT_EQ(fb.rows(), 257);
  EXPECT_EQ(fb.cols(), 80);
  EXPECT_GE(fb.minCoeff(), 0.0f);
  EXPECT_LE(fb.maxCoeff(), 1.0f);
}

TEST(MixAtSnr, ZeroDbPowerRatio) {
  Rng rng(4);
  const auto clean = gaussian(8000, 0.05, rng);
  const auto noise = gaussian(3000, 0.3, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = mix_at_snr_detailed(clean, noise, 0.0, rng);
    EXPECT_NEAR(m.scaled_noise.power() / clean.power(), 1.0, 1e-6);
    EXPECT_EQ(m.mixed.size(), clean.size());
  }
}

TEST(MixAtSnr, RealizedSnrWithoutClipping) {
  Rng rng(5);
  const auto clean = gaussian(8000, 0.05, rng);
  const auto noise = gaussian(5000, 0.1, rng);
  for (double snr : {-5.0, 0.0, 3.0, 10.0, 20.0}) {
    const auto m = mix_at_snr_detailed(clean, noise, snr, rng);
    ASSERT_FALSE(m.renormalized);
    const Eigen::VectorXf diff = m.mixed.samples - clean.samples;
    const double realized = 10 * std::log10(clean.power() / (diff.cast<double>().squaredNorm() / diff.size()));
    EXPECT_NEAR(realized, snr, 0.01) << snr;
  }
}

TEST(MixAtSnr, HighSnrLeavesCleanAlmostUntouched) {
  Rng rng(6);
  const auto clean = gaussian(4000, 0.1, rng);
  const auto noise = gaussian(4000, 0.1, rng);
  const auto m = mix_at_snr_detailed(clean, noise, 100.0, rng);
  EXPECT_LE(m.scaled_noise.power(), 1e-10 * clean.power());
}

TEST(MixAtSnr, ScaleFactorHandCase) {
  Waveform clean, noise;
  clean.samples = Eigen::VectorXf::Constant(100, 0.2f);  // power 0.04
  noise.samples = Eigen::VectorXf::Constant(100, 0.1f);  // power 0.01
  EXPECT_NEAR(snr_scale(clean, noise, 10.0), std::sqrt(0.04 / (10 * 0.01)), 1e-6);
  EXPECT_NEAR(snr_scale(clean, noise, 10.0), 0.6325, 1e-4);
}

TEST(MixAtSnr, ClippingRenormalizesToUnitPeak) {
  Waveform clean;
  clean.samples = Eigen::VectorXf::Constant(1000, 0.9f);
  Rng rng(7);
  const auto noise = gaussian(1000, 0.5, rng);
  const auto m = mix_at_snr_detailed(clean, noise, 0.0, rng);
  EXPECT_TRUE(m.renormalized);
  EXPECT_NEAR(m.mixed.samples.cwiseAbs().maxCoeff(), 1.0f, 1e-6);
}

TEST(MixAtSnr, SilentInputsThrow) {
  Rng rng(8);
  Waveform silent;
  silent.samples = Eigen::VectorXf::Zero(100);
  const auto x = gaussian(100, 0.1, rng);
  EXPECT_THROW(mix_at_snr(x, silent, 0.0, rng), Error);
  EXPECT_THROW(mix_at_snr(silent, x, 0.0, rng), Error);
}

TEST(MakeBabble, UnitRmsAndPreconditions) {
  std::vector<Waveform> pool = {tone(440, 0.3, 4000), tone(440, 0.3, 4000)};
  Rng rng(9);
  const auto b = make_babble(pool, 2, rng);
  EXPECT_NEAR(std::sqrt(b.power()), 1.0, 1e-6);
  EXPECT_THROW(make_babble(pool, 1, rng), Error);
  EXPECT_THROW(make_babble(pool, 3, rng), Error);
}

double spectral_flatness(const Waveform& w) {
  std::vector<double> avg(257, 0.0);
  int frames = 0;
  for (Eigen::Index s = 0; s + 400 <= w.size() && frames < 8; s += 1200, ++frames) {
    const auto p = naive_power(w, s, 400, 512);
    for (size_t k = 0; k < p.size(); ++k) avg[k] += p[k];
  }
  double log_sum = 0, sum = 0;
  for (size_t k = 1; k < avg.size(); ++k) {
    log_sum += std::log(avg[k] / frames + 1e-20);
    sum += avg[k] / frames;
  }
  const double n = static_cast<double>(avg.size() - 1);
  return std::exp(log_sum / n) / (sum / n);
}

TEST(MakeBabble, FlatterThanAnySource) {
  data::CorpusSpec spec;
  Rng rng(10);
  std::vector<Waveform> pool;
  for (int i = 0; i < 30; ++i) {
    pool.push_back(data::synthesize(spec, data::sample_symbols(spec, 8, rng)).audio);
  }
  const auto babble = make_babble(pool, 30, rng);
  const double fb = spectral_flatness(babble);
  for (const auto& w : pool) EXPECT_GT(fb, spectral_flatness(w));
}

TEST(SpecAugment, DisabledIsIdentity) {
  Rng rng(11);
  FeatureSequence f{MatrixF::Random(50, 80), 100};
  SpecAugmentConfig cfg{0, 27, 0, 0.05};
  const auto out = spec_augment(f, cfg, rng);
  EXPECT_TRUE(out.frames == f.frames);
}

TEST(SpecAugment, FullBandMaskFillsMean) {
  FeatureSequence f{MatrixF::Random(30, 80), 100};
  const float mean = static_cast<float>(f.frames.cast<double>().mean());
  // Draw seeds until the single mask covers the full band.
  for (uint64_t seed = 0; seed < 10000; ++seed) {
    Rng rng(seed);
    const auto out = spec_augment(f, {1, 80, 0, 0.0}, rng);
    if ((out.frames.array() == mean).all()) {
      SUCCEED();
      return;
    }
  }
  FAIL() << "no full-band draw in 10000 seeds";
}

TEST(SpecAugment, ShapeAndReplay) {
  FeatureSequence f{MatrixF::Random(200, 80), 100};
  Rng a(12), b(12);
  const auto x = spec_augment(f, {}, a);
  const auto y = spec_augment(f, {}, b);
  EXPECT_EQ(x.frames.rows(), 200);
  EXPECT_EQ(x.frames.cols(), 80);
  EXPECT_TRUE(x.frames == y.frames);
  const float mean = static_cast<float>(f.frames.cast<double>().mean());
  // Every changed entry carries the utterance mean.
  for (Eigen::Index i = 0; i < x.frames.size(); ++i) {
    if (x.frames.data()[i] != f.frames.data()[i]) EXPECT_EQ(x.frames.data()[i], mean);
  }
}

TEST(Wav, RoundTripWithin16BitQuantization) {
  const auto path = std::filesystem::temp_directory_path() / "fava_test_dsp.wav";
  const auto w = tone(300, 0.7, 1600);
  write_wav(path, w);
  const auto r = read_wav(path);
  ASSERT_EQ(r.size(), w.size());
  EXPECT_EQ(r.sample_rate, 16000);
  EXPECT_LE((r.samples - w.samples).cwiseAbs().maxCoeff(), 1.0f / 32767.0f);
  std::filesystem::remove(path);
  EXPECT_THROW(read_wav(path), Error);
}

}  // namespace
}  // namespace fava::dsp
