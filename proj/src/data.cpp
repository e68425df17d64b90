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

#include "fava/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "json.hpp"

namespace fava::data {

namespace fs = std::filesystem;
using nlohmann::json;

void CorpusSpec::validate() const {
  if (num_pretrain < 0 || num_train < 0 || num_dev < 0 || num_test < 0) throw Error("corpus: negative split size");
  if (min_symbols < 1 || max_symbols < min_symbols) throw Error("corpus: bad symbols-per-utterance range");
  if (static_cast<long>(max_symbols) * symbol_ms > 15000) throw Error("corpus: utterances longer than 15 s");
  if (vocab_size < 2 || vocab_size > 26) throw Error("corpus: vocab_size must be in [2, 26]");
  if (video_height < 8 || video_width < 8) throw Error("corpus: video resolution too small");
  if (symbol_ms < 40) throw Error("corpus: symbol shorter than one video frame");
  if (!(amplitude > 0.0 && amplitude <= 1.0)) throw Error("corpus: amplitude must be in (0, 1]");
  if (!(noise_seconds > 0.0)) throw Error("corpus: noise_seconds must be positive");
  if (babble_k < 2) throw Error("corpus: babble_k must be at least 2");
  if (grammar_branching < 1 || grammar_branching > vocab_size)
    throw Error("corpus: grammar_branching must be in [1, vocab_size]");
}

std::string to_line(const ManifestRecord& r) {
  json j;
  j["id"] = r.id;
  j["audio_path"] = r.audio_path;
  j["video_path"] = r.video_path;
  j["transcript"] = r.transcript;
  j["duration_s"] = r.duration_s;
  j["split"] = r.split;
  return j.dump();
}

ManifestRecord parse_manifest_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    ManifestRecord r;
    r.id = j.at("id").get<std::string>();
    r.audio_path = j.at("audio_path").get<std::string>();
    r.video_path = j.at("video_path").get<std::string>();
    r.transcript = j.at("transcript").get<std::string>();
    r.duration_s = j.at("duration_s").get<double>();
    r.split = j.at("split").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw Error(std::string("bad manifest record: ") + e.what());
  }
}

void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << to_line(r) << '\n';
}

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_manifest_line(line));
  }
  return out;
}

std::vector<int> grammar_offsets(const CorpusSpec& spec) {
  // Offsets 1, 1 + 5, 1 + 10, ... (mod V) never repeat for V coprime to 5,
  // and for V a multiple of 5 the stride falls back to 1.
  const int V = spec.vocab_size;
  const int stride = std::gcd(5, V) == 1 ? 5 : 1;
  std::vector<int> out(spec.grammar_branching);
  for (int k = 0; k < spec.grammar_branching; ++k) out[k] = (1 + stride * k) % V;
  return out;
}

std::vector<int> sample_symbols(const CorpusSpec& spec, int length, Rng& rng) {
  const auto offsets = grammar_offsets(spec);
  std::vector<int> out(length);
  for (int i = 0; i < length; ++i) {
    if (i == 0) {
      out[i] = static_cast<int>(rng.uniform_int(spec.vocab_size));
    } else {
      const int o = offsets[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(offsets.size())))];
      out[i] = (out[i - 1] + o) % spec.vocab_size;
    }
  }
  return out;
}

std::vector<std::pair<double, double>> symbol_tones(int vocab_size) {
  const int n = 2 * vocab_size;
  const double lo = dsp::hz_to_mel(300.0);
  const double hi = dsp::hz_to_mel(6000.0);
  std::vector<double> tones(n);
  for (int i = 0; i < n; ++i) tones[i] = dsp::mel_to_hz(lo + (hi - lo) * i / (n - 1));
  std::vector<std::pair<double, double>> out(vocab_size);
  for (int s = 0; s < vocab_size; ++s) out[s] = {tones[s], tones[s + vocab_size]};
  return out;
}

Eigen::VectorXf symbol_signature(const CorpusSpec& spec, int symbol) {
  if (symbol < 0 || symbol >= spec.vocab_size) throw Error("symbol out of range");
  const auto [f1, f2] = symbol_tones(spec.vocab_size)[symbol];
  const int n = dsp::kSampleRate * spec.symbol_ms / 1000;
  const int ramp = dsp::kSampleRate * 5 / 1000;
  Eigen::VectorXf out(n);
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / dsp::kSampleRate;
    double env = 1.0;
    const int edge = std::min(i, n - 1 - i);
    if (edge < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * (edge + 0.5) / ramp);
    const double v = 0.5 * (std::sin(2 * std::numbers::pi * f1 * t) + std::sin(2 * std::numbers::pi * f2 * t));
    out[i] = static_cast<float>(spec.amplitude * env * v);
  }
  return out;
}

std::vector<uint8_t> render_mouth(const CorpusSpec& spec, int symbol, int parity) {
  if (symbol < 0 || symbol >= spec.vocab_size) throw Error("symbol out of range");
  const int H = spec.video_height;
  const int W = spec.video_width;
  const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(spec.vocab_size))));
  const int wi = symbol % grid;
  const int ai = symbol / grid;
  const double rx = W * (0.12 + 0.26 * wi / std::max(grid - 1, 1));
  const double ry = H * (0.03 + 0.22 * ai / std::max(grid - 1, 1));
  const double cx = W / 2.0 + (parity ? 1.0 : -1.0) * W / 16.0;
  const double cy = H * 0.55;
  std::vector<uint8_t> px(static_cast<size_t>(H) * W * 3);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double dx = (x + 0.5 - cx) / rx;
      const double dy = (y + 0.5 - cy) / (ry + 1.0);
      const double r = dx * dx + dy * dy;
      uint8_t c[3] = {214, 168, 140};
      if (r <= 1.0) {
        c[0] = 72, c[1] = 18, c[2] = 30;
      } else if (r <= 1.6) {
        c[0] = 178, c[1] = 70, c[2] = 80;
      }
      uint8_t* p = px.data() + (static_cast<size_t>(y) * W + x) * 3;
      std::copy(c, c + 3, p);
    }
  }
  return px;
}

int symbol_at_frame(const CorpusSpec& spec, int frame, int num_symbols) {
  const long t_ms = static_cast<long>(frame) * 1000 / kVideoRate;
  return static_cast<int>(std::min<long>(t_ms / spec.symbol_ms, num_symbols - 1));
}

SyntheticUtterance synthesize(const CorpusSpec& spec, const std::vector<int>& symbols) {
  if (symbols.empty()) throw Error("synthesize: empty symbol sequence");
  SyntheticUtterance u;
  u.symbols = symbols;
  const int per = dsp::kSampleRate * spec.symbol_ms / 1000;
  u.audio.samples.resize(static_cast<Eigen::Index>(per) * symbols.size());
  for (size_t i = 0; i < symbols.size(); ++i)
    u.audio.samples.segment(static_cast<Eigen::Index>(i) * per, per) = symbol_signature(spec, symbols[i]);

  const double duration = symbols.size() * spec.symbol_ms / 1000.0;
  const int frames = static_cast<int>(std::lround(duration * kVideoRate));
  const size_t frame_size = static_cast<size_t>(spec.video_height) * spec.video_width * 3;
  std::vector<uint8_t> pixels;
  pixels.reserve(frame_size * frames);
  for (int k = 0; k < frames; ++k) {
    const int i = symbol_at_frame(spec, k, static_cast<int>(symbols.size()));
    const auto f = render_mouth(spec, symbols[i], i % 2);
    pixels.insert(pixels.end(), f.begin(), f.end());
  }
  u.video = make_u8({static_cast<uint32_t>(frames), static_cast<uint32_t>(spec.video_height),
                     static_cast<uint32_t>(spec.video_width), 3u},
                    std::move(pixels));
  return u;
}

namespace {

dsp::Waveform peak_normalized(Eigen::VectorXd x, double peak) {
  const double m = x.cwiseAbs().maxCoeff();
  if (m > 0.0) x *= peak / m;
  dsp::Waveform w;
  w.samples = x.cast<float>();
  return w;
}

}  // namespace

dsp::Waveform cafe_noise(double seconds, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(seconds * dsp::kSampleRate);
  Eigen::VectorXd x(n);
  // Pink noise (Kellet's economy filter) for the room, plus decaying
  // high-pitched clinks of crockery.
  double b0 = 0, b1 = 0, b2 = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = rng.normal();
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    x[i] = 0.25 * (b0 + b1 + b2 + w * 0.1848);
  }
  const int clinks = static_cast<int>(std::ceil(seconds * 3));
  for (int c = 0; c < clinks; ++c) {
    const Eigen::Index start = rng.uniform_int(n);
    const double f = rng.uniform(2000.0, 5000.0);
    const double amp = rng.uniform(0.5, 1.5);
    const double tau = rng.uniform(0.01, 0.04);
    for (Eigen::Index i = start; i < n; ++i) {
      const double t = static_cast<double>(i - start) / dsp::kSampleRate;
      if (t > 6 * tau) break;
      x[i] += amp * std::exp(-t / tau) * std::sin(2 * std::numbers::pi * f * t);
    }
  }
  return peak_normalized(std::move(x), 0.9);
}

dsp::Waveform music_noise(double seconds, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(seconds * dsp::kSampleRate);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (int voice = 0; voice < 2; ++voice) {
    Eigen::Index pos = 0;
    while (pos < n) {
      const auto len = static_cast<Eigen::Index>(rng.uniform(0.15, 0.4) * dsp::kSampleRate);
      const double f0 = 110.0 * std::pow(2.0, static_cast<double>(rng.uniform_int(36)) / 12.0);
      const double amp = rng.uniform(0.4, 1.0);
      for (Eigen::Index i = 0; i < len && pos + i < n; ++i) {
        const double t = static_cast<double>(i) / dsp::kSampleRate;
        const double env = std::min(1.0, t / 0.01) * std::exp(-t / 0.25);
        double v = 0.0;
        for (int h = 1; h <= 4; ++h) v += std::sin(2 * std::numbers::pi * f0 * h * t) / h;
        x[pos + i] += amp * env * v;
      }
      pos += len;
    }
  }
  return peak_normalized(std::move(x), 0.9);
}

rnnt::Vocabulary corpus_vocabulary(const CorpusSpec& spec) { return rnnt::Vocabulary::letters(spec.vocab_size); }

FeatureStats compute_feature_stats(const std::vector<dsp::Waveform>& waves, const dsp::MelConfig& mel) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(mel.num_mels);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(mel.num_mels);
  double count = 0;
  for (const auto& w : waves) {
    const MatrixD f = dsp::compute_logmel(w, mel).frames.cast<double>();
    sum += f.colwise().sum().transpose();
    sq += f.array().square().matrix().colwise().sum().transpose();
    count += static_cast<double>(f.rows());
  }
  if (count == 0) throw Error("feature stats: no frames");
  FeatureStats s;
  const Eigen::VectorXd mean = sum / count;
  const Eigen::VectorXd var = (sq / count - mean.cwiseAbs2()).cwiseMax(0.0);
  s.mean = mean.transpose().cast<float>();
  s.stdev = var.cwiseSqrt().cwiseMax(1e-5).transpose().cast<float>();
  return s;
}

MatrixF FeatureStats::normalize(const MatrixF& frames) const {
  if (frames.cols() != mean.size()) throw Error("feature stats: dimension mismatch");
  MatrixF out = frames;
  out.rowwise() -= mean;
  out.array().rowwise() /= stdev.array();
  return out;
}

void write_feature_stats(const fs::path& path, const FeatureStats& s) {
  std::vector<float> v(s.mean.data(), s.mean.data() + s.mean.size());
  v.insert(v.end(), s.stdev.data(), s.stdev.data() + s.stdev.size());
  write_tensor(path, make_f32({2u, static_cast<uint32_t>(s.mean.size())}, v));
}

FeatureStats read_feature_stats(const fs::path& path) {
  const RawTensor t = read_tensor(path);
  if (t.dims.size() != 2 || t.dims[0] != 2) throw Error("feature stats: expected a 2 x D tensor");
  const auto v = to_f32(t);
  const Eigen::Index d = t.dims[1];
  FeatureStats s;
  s.mean = Eigen::Map<const RowVector<float>>(v.data(), d);
  s.stdev = Eigen::Map<const RowVector<float>>(v.data() + d, d);
  return s;
}

void generate_corpus(const CorpusSpec& spec, const fs::path& out_dir) {
  spec.validate();
  fs::create_directories(out_dir);
  const auto vocab = corpus_vocabulary(spec);
  std::vector<dsp::Waveform> pretrain_pool;
  std::vector<dsp::Waveform> train_pool;
  const int counts[] = {spec.num_pretrain, spec.num_train, spec.num_dev, spec.num_test};
  for (size_t si = 0; si < split_names().size(); ++si) {
    const std::string& split = split_names()[si];
    const fs::path dir = out_dir / split;
    fs::create_directories(dir / "audio");
    fs::create_directories(dir / "video");
    Rng rng(spec.seed, "corpus/" + split);
    std::vector<ManifestRecord> records;
    for (int i = 0; i < counts[si]; ++i) {
      const int len = static_cast<int>(rng.uniform_int(spec.min_symbols, spec.max_symbols));
      const std::vector<int> symbols = sample_symbols(spec, len, rng);
      const SyntheticUtterance u = synthesize(spec, symbols);
      char id[64];
      std::snprintf(id, sizeof id, "%s-%05d", split.c_str(), i);
      ManifestRecord r;
      r.id = id;
      r.audio_path = "audio/" + r.id + ".wav";
      r.video_path = "video/" + r.id + ".fvt";
      std::vector<int> labels(len);
      for (int k = 0; k < len; ++k) labels[k] = symbols[k] + 1;
      r.transcript = vocab.decode(labels);
      r.duration_s = len * spec.symbol_ms / 1000.0;
      r.split = split;
      dsp::write_wav(dir / r.audio_path, u.audio);
      write_tensor(dir / r.video_path, u.video);
      records.push_back(r);
      if (split == "pretrain") pretrain_pool.push_back(u.audio);
      if (split == "train") train_pool.push_back(u.audio);
    }
    write_manifest(dir / "manifest.txt", records);
  }

  write_feature_stats(out_dir / "feature_stats.fvt",
                      compute_feature_stats(pretrain_pool.empty() ? train_pool : pretrain_pool));

  fs::create_directories(out_dir / "noise");
  Rng cafe_rng(spec.seed, "noise/cafe");
  Rng music_rng(spec.seed, "noise/music");
  dsp::write_wav(out_dir / "noise" / "cafe.wav", cafe_noise(spec.noise_seconds, cafe_rng));
  dsp::write_wav(out_dir / "noise" / "music.wav", music_noise(spec.noise_seconds, music_rng));
  if (train_pool.size() >= 2) {
    Rng babble_rng(spec.seed, "noise/babble_eval");
    const int k = std::min<int>(spec.babble_k, static_cast<int>(train_pool.size()));
    const dsp::Waveform b = dsp::make_babble(train_pool, k, babble_rng);
    dsp::write_wav(out_dir / "noise" / "babble_eval.wav",
                   peak_normalized(b.samples.cast<double>(), 0.9));
  }

  json j;
  j["num_pretrain"] = spec.num_pretrain;
  j["num_train"] = spec.num_train;
  j["num_dev"] = spec.num_dev;
  j["num_test"] = spec.num_test;
  j["min_symbols"] = spec.min_symbols;
  j["max_symbols"] = spec.max_symbols;
  j["vocab_size"] = spec.vocab_size;
  j["seed"] = spec.seed;
  j["video_height"] = spec.video_height;
  j["video_width"] = spec.video_width;
  j["symbol_ms"] = spec.symbol_ms;
  j["amplitude"] = spec.amplitude;
  j["noise_seconds"] = spec.noise_seconds;
  j["babble_k"] = spec.babble_k;
  j["grammar_branching"] = spec.grammar_branching;
  std::ofstream(out_dir / "corpus.json") << j.dump(2) << '\n';
}

Example load_example(const ManifestRecord& rec, const fs::path& split_dir, const rnnt::Vocabulary& vocab) {
  try {
    Example ex;
    ex.id = rec.id;
    ex.audio = dsp::read_wav(split_dir / rec.audio_path);
    if (ex.audio.sample_rate != dsp::kSampleRate) throw Error("sample rate is not 16 kHz");
    ex.video = video_from_tensor(read_tensor(split_dir / rec.video_path));
    if (ex.video.num_frames() != static_cast<int>(std::lround(rec.duration_s * kVideoRate)))
      throw Error("video frame count does not match duration");
    ex.transcript = rec.transcript;
    ex.labels = vocab.encode(rec.transcript);
    ex.duration_s = rec.duration_s;
    return ex;
  } catch (const std::exception& e) {
    throw Error("record " + rec.id + ": " + e.what());
  }
}

Split load_split(const fs::path& corpus_dir, const std::string& split, const rnnt::Vocabulary& vocab, int limit) {
  const fs::path dir = corpus_dir / split;
  auto records = read_manifest(dir / "manifest.txt");
  if (limit >= 0 && static_cast<size_t>(limit) < records.size()) records.resize(limit);
  Split s;
  s.name = split;
  s.examples.reserve(records.size());
  for (const auto& r : records) s.examples.push_back(load_example(r, dir, vocab));
  return s;
}

}  // namespace fava::data
