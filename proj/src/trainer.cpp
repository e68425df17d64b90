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

#include "fava/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>

#include "fava/rnnt.hpp"
#include "json.hpp"

namespace fava::trainer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::pair<Mode, std::string>>& mode_names() {
  static const std::vector<std::pair<Mode, std::string>> names = {
      {Mode::kPretrainAudio, "pretrain_audio"}, {Mode::kPretrainAv, "pretrain_av"},
      {Mode::kFinetuneAv, "finetune_av"},       {Mode::kFinetuneAudio, "finetune_audio"},
      {Mode::kTfsAudio, "tfs_audio"},           {Mode::kTfsAv, "tfs_av"},
      {Mode::kAdaptAudioToAv, "adapt_audio_to_av"}};
  return names;
}

}  // namespace

std::string to_string(Mode m) {
  for (const auto& [mode, name] : mode_names()) {
    if (mode == m) return name;
  }
  throw Error("unknown mode");
}

Mode mode_from_string(const std::string& s) {
  for (const auto& [mode, name] : mode_names()) {
    if (name == s) return mode;
  }
  throw Error("unknown mode: " + s);
}

bool is_pretrain(Mode m) { return m == Mode::kPretrainAudio || m == Mode::kPretrainAv; }

bool uses_video(Mode m) {
  return m == Mode::kPretrainAv || m == Mode::kFinetuneAv || m == Mode::kTfsAv || m == Mode::kAdaptAudioToAv;
}

bool needs_init(Mode m) { return m == Mode::kFinetuneAv || m == Mode::kFinetuneAudio || m == Mode::kAdaptAudioToAv; }

model::Components components_for(Mode m) {
  model::Components c = {model::kAudioFrontend, model::kEncoder};
  if (uses_video(m)) c.insert(model::kVideoFrontend);
  if (is_pretrain(m)) {
    c.insert(model::kMlmHead);
  } else {
    c.insert(model::kPredictor);
    c.insert(model::kJoiner);
  }
  return c;
}

double Schedule::lr(int64_t step) const {
  if (step <= 0) return 0.0;
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(std::max<int64_t>(warmup_steps, 1));
  return peak_lr * std::min(s / w, std::sqrt(w / s));
}

TrainConfig TrainConfig::from(const config::KeyValues& kv) {
  TrainConfig c;
  c.mode = mode_from_string(kv.get("mode"));
  c.model = config::model_config(kv);
  c.seed = kv.get_uint("seed");
  c.steps = kv.get_int("steps");
  c.batch_size = static_cast<int>(kv.get_int("batch_size"));
  c.schedule.warmup_steps = kv.get_int("warmup_steps");
  c.schedule.peak_lr = kv.get_double("peak_lr");
  c.adam.beta1 = kv.get_double("adam_beta1");
  c.adam.beta2 = kv.get_double("adam_beta2");
  c.adam.eps = kv.get_double("adam_eps");
  c.clip_norm = kv.get_double("clip_norm");
  c.log_interval = kv.get_int("log_interval");
  c.eval_interval = kv.get_int("eval_interval");
  c.checkpoint_interval = kv.get_int("checkpoint_interval");
  c.mask_prob = kv.get_double("mask_prob");
  c.mask_span = static_cast<int>(kv.get_int("mask_span"));
  c.mask_fill_std = kv.get_double("mask_fill_std");
  c.quantizer_seed = kv.get_uint("quantizer_seed");
  c.code_dim = static_cast<int>(kv.get_int("code_dim"));
  c.noise = kv.get_bool("noise");
  c.snr_min = kv.get_double("snr_min");
  c.snr_max = kv.get_double("snr_max");
  c.clean_prob = kv.get_double("clean_prob");
  c.specaug = kv.get_bool("specaug");
  c.specaug_cfg.num_freq_masks = static_cast<int>(kv.get_int("specaug_freq_masks"));
  c.specaug_cfg.max_freq_width = static_cast<int>(kv.get_int("specaug_freq_width"));
  c.specaug_cfg.num_time_masks = static_cast<int>(kv.get_int("specaug_time_masks"));
  c.specaug_cfg.max_time_ratio = kv.get_double("specaug_time_ratio");
  c.modality_dropout = kv.get_bool("modality_dropout");
  c.max_symbols_per_frame = static_cast<int>(kv.get_int("max_symbols_per_frame"));
  c.dev_limit = static_cast<int>(kv.get_int("dev_limit"));
  c.resolved = kv.dump();
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  model.validate();
  if (steps < 0) throw Error("steps must be non-negative");
  if (batch_size < 1) throw Error("batch_size must be positive");
  if (schedule.warmup_steps < 1 || !(schedule.peak_lr >= 0)) throw Error("bad learning-rate schedule");
  if (!(clip_norm > 0)) throw Error("clip_norm must be positive");
  if (log_interval < 1 || eval_interval < 1 || checkpoint_interval < 1) throw Error("intervals must be positive");
  if (!(mask_prob >= 0 && mask_prob <= 1) || mask_span < 1) throw Error("bad masking parameters");
  if (!(clean_prob >= 0 && clean_prob <= 1)) throw Error("clean_prob must be in [0, 1]");
  if (snr_min > snr_max) throw Error("snr_min exceeds snr_max");
  if (max_symbols_per_frame < 1) throw Error("max_symbols_per_frame must be positive");
}

TrainingData load_training_data(const fs::path& corpus_dir, bool pretrain_split, bool train_split, bool dev_split,
                                int dev_limit) {
  TrainingData d;
  std::ifstream spec_in(corpus_dir / "corpus.json");
  if (!spec_in) throw Error("not a corpus directory: " + corpus_dir.string());
  const json spec = json::parse(spec_in);
  d.vocab = rnnt::Vocabulary::letters(spec.at("vocab_size").get<int>());
  d.stats = data::read_feature_stats(corpus_dir / "feature_stats.fvt");
  auto prepare = [&](const std::string& split) {
    std::vector<Prepared> out;
    for (auto& ex : data::load_split(corpus_dir, split, d.vocab).examples) {
      Prepared p;
      p.features = eval::model_features(ex.audio, d.stats);
      p.example = std::move(ex);
      out.push_back(std::move(p));
    }
    return out;
  };
  if (pretrain_split) d.pretrain = prepare("pretrain");
  if (train_split) d.train = prepare("train");
  if (dev_split) d.dev = data::load_split(corpus_dir, "dev", d.vocab, dev_limit).examples;
  d.cafe = dsp::read_wav(corpus_dir / "noise" / "cafe.wav");
  d.music = dsp::read_wav(corpus_dir / "noise" / "music.wav");
  if (fs::exists(corpus_dir / "noise" / "babble_eval.wav")) d.babble = dsp::read_wav(corpus_dir / "noise" / "babble_eval.wav");
  return d;
}

StepStats optimizer_step(ParameterTree<float>& params, const std::map<std::string, MatrixF>& grads,
                         ckpt::OptimizerState& state, const TrainConfig& cfg, int64_t step) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw Error("gradient for unknown parameter " + name);
    if (!g.allFinite()) throw DivergenceError("divergence: non-finite gradient in " + name);
    sq += g.cast<double>().squaredNorm();
  }
  StepStats st;
  st.grad_norm = std::sqrt(sq);
  st.lr = cfg.schedule.lr(step);
  const double clip = st.grad_norm > cfg.clip_norm ? cfg.clip_norm / st.grad_norm : 1.0;
  state.step += 1;
  const double b1 = cfg.adam.beta1, b2 = cfg.adam.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const float step_size = static_cast<float>(st.lr / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(cfg.adam.eps);
  for (auto& [name, t] : params.tensors()) {
    auto& m = state.m.at(name).value;
    auto& v = state.v.at(name).value;
    auto it = grads.find(name);
    if (it == grads.end()) {
      m *= static_cast<float>(b1);
      v *= static_cast<float>(b2);
    } else {
      const MatrixF g = it->second * static_cast<float>(clip);
      m = static_cast<float>(b1) * m + static_cast<float>(1 - b1) * g;
      v = static_cast<float>(b2) * v + static_cast<float>(1 - b2) * g.cwiseAbs2();
    }
    t.value.array() -= step_size * m.array() / ((v.array() * inv_c2).sqrt() + eps);
  }
  return st;
}

std::vector<std::vector<int>> epoch_batches(const std::vector<int>& lengths, int batch_size, uint64_t seed,
                                            int64_t epoch) {
  const int n = static_cast<int>(lengths.size());
  if (n == 0) throw Error("no training examples");
  Rng rng(seed, "data/epoch", static_cast<uint64_t>(epoch));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
  const int bucket = batch_size * 8;
  for (int b = 0; b < n; b += bucket) {
    std::stable_sort(order.begin() + b, order.begin() + std::min(n, b + bucket),
                     [&](int x, int y) { return lengths[x] < lengths[y]; });
  }
  std::vector<std::vector<int>> batches;
  for (int b = 0; b < n; b += batch_size) batches.emplace_back(order.begin() + b, order.begin() + std::min(n, b + batch_size));
  for (int i = static_cast<int>(batches.size()) - 1; i > 0; --i) std::swap(batches[i], batches[rng.uniform_int(i + 1)]);
  return batches;
}

namespace {

// Maps a global step to its batch; epochs are generated on demand.
class BatchSource {
 public:
  BatchSource(std::vector<int> lengths, int batch_size, uint64_t seed)
      : lengths_(std::move(lengths)), batch_size_(batch_size), seed_(seed) {
    per_epoch_ = static_cast<int64_t>((lengths_.size() + batch_size - 1) / batch_size);
    if (per_epoch_ == 0) throw Error("no training examples");
  }

  // step is 1-based.
  const std::vector<int>& batch(int64_t step) {
    const int64_t k = step - 1;
    const int64_t epoch = k / per_epoch_;
    if (epoch != cached_epoch_) {
      cached_ = epoch_batches(lengths_, batch_size_, seed_, epoch);
      cached_epoch_ = epoch;
    }
    return cached_[static_cast<size_t>(k % per_epoch_)];
  }

 private:
  std::vector<int> lengths_;
  int batch_size_;
  uint64_t seed_;
  int64_t per_epoch_ = 0;
  int64_t cached_epoch_ = -1;
  std::vector<std::vector<int>> cached_;
};

void accumulate(std::map<std::string, MatrixF>& acc, const std::map<std::string, MatrixF>& g) {
  for (const auto& [name, m] : g) {
    auto it = acc.find(name);
    if (it == acc.end()) {
      acc.emplace(name, m);
    } else {
      it->second += m;
    }
  }
}

class MetricsLog {
 public:
  explicit MetricsLog(const fs::path& path) : out_(path, std::ios::trunc), start_(std::chrono::steady_clock::now()) {
    if (!out_) throw Error("cannot write " + path.string());
  }
  void write(json record) {
    record["wall_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start_)
                            .count();
    out_ << record.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::chrono::steady_clock::time_point start_;
};

fs::path step_dir(const fs::path& out_dir, int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt-%06lld", static_cast<long long>(step));
  return out_dir / buf;
}

void copy_dir(const fs::path& from, const fs::path& to) {
  fs::remove_all(to);
  fs::copy(from, to, fs::copy_options::recursive);
}

struct RunState {
  ParameterTree<float> params;
  ckpt::OptimizerState opt;
  int64_t step = 0;
  int64_t skipped = 0;
  std::vector<ckpt::EvalRecord> evals;
};

ckpt::Checkpoint make_checkpoint(const TrainConfig& cfg, const RunState& s, const data::FeatureStats& stats,
                                 const std::optional<bestrq::RandomQuantizer>& q) {
  ckpt::Checkpoint c;
  c.step = s.step;
  c.mode = to_string(cfg.mode);
  c.model = cfg.model;
  c.seed = cfg.seed;
  c.resolved_config = cfg.resolved;
  c.params = s.params;
  c.optimizer = s.opt;
  c.quantizer = q;
  c.feature_stats = stats;
  c.evals = s.evals;
  c.skipped_steps = s.skipped;
  return c;
}

RunState resume_state(const fs::path& resume, const TrainConfig& cfg) {
  const ckpt::Checkpoint c = ckpt::load_checkpoint(resume);
  if (c.mode != to_string(cfg.mode)) throw Error("resume: checkpoint mode " + c.mode + " differs from " + to_string(cfg.mode));
  if (config::model_config_json(c.model) != config::model_config_json(cfg.model))
    throw Error("resume: model configuration differs from the checkpoint");
  RunState s;
  s.params = c.params;
  s.opt = c.optimizer;
  s.step = c.step;
  s.skipped = c.skipped_steps;
  s.evals = c.evals;
  return s;
}

double tail_mean(const std::deque<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

constexpr size_t kTailWindow = 100;

}  // namespace

bestrq::RandomQuantizer shared_quantizer(const TrainConfig& cfg, const data::FeatureStats& stats) {
  auto q = bestrq::init_quantizer(cfg.quantizer_seed, bestrq::kStack * cfg.model.feature_dim, cfg.code_dim,
                                  cfg.model.codebook_size);
  bestrq::set_normalization(q, stats.mean, stats.stdev);
  return q;
}

dsp::Waveform augment_audio(const dsp::Waveform& clean, const TrainConfig& cfg, const TrainingData& data, Rng& rng) {
  if (!cfg.noise) return clean;
  if (rng.bernoulli(cfg.clean_prob)) return clean;
  const dsp::Waveform& noise = rng.bernoulli(0.5) ? data.cafe : data.music;
  const double snr = cfg.snr_min == cfg.snr_max ? cfg.snr_min : rng.uniform(cfg.snr_min, cfg.snr_max);
  return dsp::mix_at_snr(clean, noise, snr, rng);
}

RunResult run_pretrain(const TrainConfig& cfg, const TrainingData& data, const fs::path& out_dir,
                       const fs::path& resume) {
  cfg.validate();
  if (!is_pretrain(cfg.mode)) throw Error("run_pretrain: not a pre-training mode: " + to_string(cfg.mode));
  if (data.pretrain.empty()) throw Error("run_pretrain: no pre-training utterances");
  const bool av = uses_video(cfg.mode);
  fs::create_directories(out_dir);

  const auto quantizer = shared_quantizer(cfg, data.stats);
  std::vector<std::vector<int>> targets;
  std::vector<int> lengths;
  for (const auto& p : data.pretrain) {
    targets.push_back(bestrq::quantize(quantizer, bestrq::stack_frames(dsp::compute_logmel(p.example.audio).frames)));
    lengths.push_back(static_cast<int>(p.features.rows()));
  }

  RunState s;
  if (!resume.empty()) {
    s = resume_state(resume, cfg);
  } else {
    s.params = model::init_params(cfg.model, components_for(cfg.mode), derive_seed(cfg.seed, "init"));
    s.opt = ckpt::zero_state(s.params);
  }
  const std::optional<bestrq::RandomQuantizer> q = quantizer;
  BatchSource batches(lengths, cfg.batch_size, cfg.seed);
  MetricsLog log(out_dir / "metrics.jsonl");
  RunResult result;
  std::deque<double> tail_loss, tail_acc;

  for (int64_t step = s.step + 1; step <= cfg.steps; ++step) {
    const auto& batch = batches.batch(step);
    struct Item {
      int index;
      MatrixF input;
      MatrixF video;
      bestrq::TargetSequence tgt;
      model::ModalityDecision decision = model::ModalityDecision::kBoth;
    };
    std::vector<Item> items;
    for (size_t j = 0; j < batch.size(); ++j) {
      const uint64_t key = static_cast<uint64_t>(step - 1) * static_cast<uint64_t>(cfg.batch_size) + j;
      const Prepared& p = data.pretrain[batch[j]];
      const int T = static_cast<int>(p.features.rows());
      Rng mask_rng(cfg.seed, "pretrain/mask", key);
      const auto mask = bestrq::sample_mask(T, cfg.mask_prob, cfg.mask_span, mask_rng);
      Item it;
      it.index = batch[j];
      it.tgt.labels = targets[batch[j]];
      it.tgt.target_mask = bestrq::mask_at_target_rate(mask);
      if (it.tgt.num_targets() == 0) continue;
      Rng fill_rng(cfg.seed, "pretrain/fill", key);
      it.input = bestrq::apply_audio_mask({p.features, 100}, mask, fill_rng, cfg.mask_fill_std).frames;
      if (av) {
        if (cfg.modality_dropout) {
          Rng drop_rng(cfg.seed, "pretrain/dropout", key);
          it.decision = model::sample_modality_dropout(drop_rng);
        }
        const auto& frames = p.example.video.frames;
        std::vector<bool> vmask(static_cast<size_t>(frames.rows()), false);
        for (size_t i = 0; i < vmask.size() && i < it.tgt.target_mask.size(); ++i) vmask[i] = it.tgt.target_mask[i];
        Rng video_rng(cfg.seed, "pretrain/video_mask", key);
        it.video = bestrq::apply_video_mask(frames, vmask, video_rng);
      }
      items.push_back(std::move(it));
    }
    if (items.empty()) {
      ++s.skipped;
      s.step = step;
      log.write({{"step", step}, {"skipped", true}, {"skipped_steps", s.skipped}});
      continue;
    }
    std::map<std::string, MatrixF> grads;
    double loss_sum = 0.0;
    int64_t n_targets = 0, n_correct = 0;
    const float inv = 1.0f / static_cast<float>(items.size());
    for (const auto& it : items) {
      ad::Graph<float> g;
      model::Context<float> c{g, cfg.model, s.params};
      model::Inputs in{&it.input, av ? &it.video : nullptr, it.decision};
      auto enc = model::encode(c, in);
      const auto rows = static_cast<Eigen::Index>(it.tgt.size());
      if (enc.rows() < rows) throw Error("pretrain: encoder output shorter than the target sequence");
      auto logits = model::mlm_head(c, ad::slice_rows(enc, 0, rows));
      auto m = bestrq::mlm_loss<float>(logits.value(), it.tgt, true);
      loss_sum += m.loss;
      n_targets += m.num_targets;
      n_correct += m.num_correct;
      g.backward(ad::scale(ad::loss_node(logits, m.loss, std::move(m.grad)), inv));
      accumulate(grads, g.param_grads());
    }
    const double loss = loss_sum / static_cast<double>(items.size());
    if (!std::isfinite(loss)) throw DivergenceError("divergence: non-finite loss at step " + std::to_string(step));
    const auto st = optimizer_step(s.params, grads, s.opt, cfg, step);
    s.step = step;
    const double acc = static_cast<double>(n_correct) / static_cast<double>(n_targets);
    if (result.initial_loss == 0.0 && tail_loss.empty()) result.initial_loss = loss;
    tail_loss.push_back(loss);
    tail_acc.push_back(acc);
    if (tail_loss.size() > kTailWindow) tail_loss.pop_front(), tail_acc.pop_front();
    if (step == 1 || step % cfg.log_interval == 0 || step == cfg.steps) {
      log.write({{"step", step},
                 {"loss", loss},
                 {"masked_acc", acc},
                 {"targets", n_targets},
                 {"lr", st.lr},
                 {"grad_norm", st.grad_norm},
                 {"skipped_steps", s.skipped}});
    }
    if (step % cfg.checkpoint_interval == 0 && step != cfg.steps)
      ckpt::save_checkpoint(step_dir(out_dir, step), make_checkpoint(cfg, s, data.stats, q));
  }
  result.final_checkpoint = out_dir / "final";
  ckpt::save_checkpoint(result.final_checkpoint, make_checkpoint(cfg, s, data.stats, q));
  result.final_loss = tail_mean(tail_loss);
  result.final_masked_acc = tail_mean(tail_acc);
  result.skipped_steps = s.skipped;
  return result;
}

RunResult run_finetune(const TrainConfig& cfg, const TrainingData& data, const fs::path& out_dir,
                       const ParameterTree<float>* init, const fs::path& resume) {
  cfg.validate();
  if (is_pretrain(cfg.mode)) throw Error("run_finetune: not a fine-tuning mode: " + to_string(cfg.mode));
  if (data.train.empty()) throw Error("run_finetune: no training utterances");
  const bool av = uses_video(cfg.mode);
  fs::create_directories(out_dir);

  RunState s;
  if (!resume.empty()) {
    s = resume_state(resume, cfg);
  } else {
    if (init) {
      s.params = *init;
    } else {
      if (needs_init(cfg.mode)) throw Error(to_string(cfg.mode) + " requires an initial checkpoint");
      s.params = model::init_params(cfg.model, components_for(cfg.mode), derive_seed(cfg.seed, "init"));
    }
    s.opt = ckpt::zero_state(s.params);
  }
  for (const auto& root : s.params.roots()) {
    if (!components_for(cfg.mode).count(root))
      throw Error("parameter root " + root + " is outside the component set of " + to_string(cfg.mode));
  }
  for (const auto& root : components_for(cfg.mode)) {
    if (!s.params.has_root(root)) throw Error("initial tree lacks " + root + " required by " + to_string(cfg.mode));
  }

  std::vector<int> lengths;
  for (const auto& p : data.train) lengths.push_back(static_cast<int>(p.features.rows()));
  BatchSource batches(lengths, cfg.batch_size, cfg.seed);
  MetricsLog log(out_dir / "metrics.jsonl");
  RunResult result;
  std::deque<double> tail_loss;
  const std::optional<bestrq::RandomQuantizer> no_quantizer;

  auto dev_eval = [&](int64_t step) {
    eval::EvalOptions opt;
    opt.max_symbols_per_frame = cfg.max_symbols_per_frame;
    opt.babble = &data.babble;
    opt.limit = cfg.dev_limit;
    opt.condition = eval::Condition::kClean;
    const auto clean = eval::evaluate(cfg.model, s.params, data.dev, data.stats, data.vocab, opt);
    opt.condition = eval::Condition::kBabble0dB;
    const auto noisy = eval::evaluate(cfg.model, s.params, data.dev, data.stats, data.vocab, opt);
    s.evals.push_back({step, clean.wer(), noisy.wer()});
    log.write({{"step", step}, {"dev_wer_clean", clean.wer()}, {"dev_wer_noisy", noisy.wer()}});
    const auto dir = step_dir(out_dir, step);
    ckpt::save_checkpoint(dir, make_checkpoint(cfg, s, data.stats, no_quantizer));
    std::vector<eval::Candidate> cands;
    for (const auto& e : s.evals) cands.push_back({"", e.step, e.wer_clean, e.wer_noisy});
    const auto best = s.evals[eval::select_checkpoint(cands)];
    if (best.step == step) copy_dir(dir, out_dir / "best");
  };

  // Carry over the best checkpoint of the interrupted run when it predates
  // the resume point.
  if (!resume.empty() && !s.evals.empty()) {
    std::vector<eval::Candidate> cands;
    for (const auto& e : s.evals) cands.push_back({"", e.step, e.wer_clean, e.wer_noisy});
    const auto best = s.evals[eval::select_checkpoint(cands)];
    const auto src = step_dir(resume.parent_path(), best.step);
    if (fs::exists(src)) copy_dir(src, out_dir / "best");
  }

  for (int64_t step = s.step + 1; step <= cfg.steps; ++step) {
    const auto& batch = batches.batch(step);
    std::map<std::string, MatrixF> grads;
    double loss_sum = 0.0;
    const float inv = 1.0f / static_cast<float>(batch.size());
    for (size_t j = 0; j < batch.size(); ++j) {
      const uint64_t key = static_cast<uint64_t>(step - 1) * static_cast<uint64_t>(cfg.batch_size) + j;
      const Prepared& p = data.train[batch[j]];
      Rng noise_rng(cfg.seed, "finetune/noise", key);
      MatrixF feats;
      if (cfg.noise) {
        feats = eval::model_features(augment_audio(p.example.audio, cfg, data, noise_rng), data.stats);
      } else {
        feats = p.features;
      }
      if (cfg.specaug) {
        Rng spec_rng(cfg.seed, "finetune/specaug", key);
        feats = dsp::spec_augment({std::move(feats), 100}, cfg.specaug_cfg, spec_rng).frames;
      }
      model::ModalityDecision decision = model::ModalityDecision::kBoth;
      if (av && cfg.modality_dropout) {
        Rng drop_rng(cfg.seed, "finetune/dropout", key);
        decision = model::sample_modality_dropout(drop_rng);
      }
      ad::Graph<float> g;
      model::Context<float> c{g, cfg.model, s.params};
      model::Inputs in{&feats, av ? &p.example.video.frames : nullptr, decision};
      auto enc = model::encode(c, in);
      auto loss = rnnt::transducer_loss(c, enc, p.example.labels);
      loss_sum += loss.value()(0, 0);
      g.backward(ad::scale(loss, inv));
      accumulate(grads, g.param_grads());
    }
    const double loss = loss_sum / static_cast<double>(batch.size());
    if (!std::isfinite(loss)) throw DivergenceError("divergence: non-finite loss at step " + std::to_string(step));
    const auto st = optimizer_step(s.params, grads, s.opt, cfg, step);
    s.step = step;
    if (result.initial_loss == 0.0 && tail_loss.empty()) result.initial_loss = loss;
    tail_loss.push_back(loss);
    if (tail_loss.size() > kTailWindow) tail_loss.pop_front();
    if (step == 1 || step % cfg.log_interval == 0 || step == cfg.steps) {
      log.write({{"step", step}, {"loss", loss}, {"lr", st.lr}, {"grad_norm", st.grad_norm}});
    }
    if (!data.dev.empty() && (step % cfg.eval_interval == 0 || step == cfg.steps)) dev_eval(step);
  }
  if (!data.dev.empty() && s.evals.empty()) dev_eval(s.step);

  result.final_checkpoint = out_dir / "final";
  ckpt::save_checkpoint(result.final_checkpoint, make_checkpoint(cfg, s, data.stats, no_quantizer));
  if (fs::exists(out_dir / "best")) result.best_checkpoint = out_dir / "best";
  result.final_loss = tail_mean(tail_loss);
  result.evals = s.evals;
  return result;
}

ParameterTree<float> init_stage2_from_stage1(const ParameterTree<float>& stage1, const model::ModelConfig& cfg,
                                             Mode mode, uint64_t seed) {
  if (is_pretrain(mode)) throw Error("stage-2 init needs a fine-tuning mode");
  ParameterTree<float> tree = model::init_params(cfg, components_for(mode), derive_seed(seed, "init"));
  std::vector<std::string> bad;
  for (auto& [name, t] : tree.tensors()) {
    const std::string root = root_of(name);
    if (root != model::kAudioFrontend && root != model::kEncoder) continue;
    if (!stage1.contains(name) || stage1.at(name).shape != t.shape) {
      bad.push_back(name);
      continue;
    }
    t.value = stage1.value(name);
  }
  for (const auto& [name, t] : stage1.tensors()) {
    const std::string root = root_of(name);
    if ((root == model::kAudioFrontend || root == model::kEncoder) && !tree.contains(name)) bad.push_back(name);
  }
  if (!bad.empty()) {
    std::string msg = "stage-2 init: incompatible tensors:";
    for (const auto& n : bad) msg += " " + n;
    throw Error(msg);
  }
  return tree;
}

ParameterTree<float> adapt_audio_to_av(const ParameterTree<float>& audio, const model::ModelConfig& cfg,
                                       uint64_t seed) {
  ParameterTree<float> tree =
      model::init_params(cfg, components_for(Mode::kAdaptAudioToAv), derive_seed(seed, "init"));
  for (const char* root : {model::kAudioFrontend, model::kEncoder}) {
    if (!audio.has_root(root)) throw Error(std::string("adapt: source checkpoint lacks ") + root);
  }
  // A root is reused only when every tensor matches in name and shape.
  for (const char* root : {model::kAudioFrontend, model::kEncoder, model::kPredictor, model::kJoiner}) {
    bool compatible = audio.has_root(root);
    int64_t expected = 0, have = 0;
    for (const auto& [name, t] : tree.tensors()) {
      if (root_of(name) != root) continue;
      ++expected;
      if (!audio.contains(name) || audio.at(name).shape != t.shape) compatible = false;
    }
    for (const auto& [name, _] : audio.tensors()) have += root_of(name) == root;
    compatible = compatible && expected == have;
    const bool required = std::string(root) == model::kAudioFrontend || std::string(root) == model::kEncoder;
    if (!compatible) {
      if (required) throw Error(std::string("adapt: incompatible ") + root + " (d_model or layout differs)");
      continue;
    }
    for (auto& [name, t] : tree.tensors()) {
      if (root_of(name) == root) t.value = audio.value(name);
    }
  }
  return tree;
}

}  // namespace fava::trainer
