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

#ifndef FAVA_TRAINER_HPP_
#define FAVA_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fava/bestrq.hpp"
#include "fava/checkpoint.hpp"
#include "fava/config.hpp"
#include "fava/data.hpp"
#include "fava/dsp.hpp"
#include "fava/eval.hpp"
#include "fava/model.hpp"

namespace fava::trainer {

enum class Mode { kPretrainAudio, kPretrainAv, kFinetuneAv, kFinetuneAudio, kTfsAudio, kTfsAv, kAdaptAudioToAv };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);
bool is_pretrain(Mode m);
bool uses_video(Mode m);
// Modes that start from an existing checkpoint.
bool needs_init(Mode m);
model::Components components_for(Mode m);

class DivergenceError : public Error {
 public:
  using Error::Error;
};

struct Schedule {
  int64_t warmup_steps = 200;
  double peak_lr = 2e-3;

  // peak * min(step / warmup, sqrt(warmup / step)); zero at step 0.
  double lr(int64_t step) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

struct TrainConfig {
  Mode mode = Mode::kFinetuneAv;
  model::ModelConfig model;
  uint64_t seed = 7;
  int64_t steps = 1000;
  int batch_size = 8;
  Schedule schedule;
  AdamConfig adam;
  double clip_norm = 1.0;
  int64_t log_interval = 10;
  int64_t eval_interval = 200;
  int64_t checkpoint_interval = 200;
  // pre-training
  double mask_prob = 0.01;
  int mask_span = 40;
  double mask_fill_std = 0.1;
  uint64_t quantizer_seed = 1234;
  int code_dim = 16;
  // fine-tuning augmentation
  bool noise = true;
  double snr_min = 0.0;
  double snr_max = 20.0;
  double clean_prob = 0.25;
  bool specaug = true;
  dsp::SpecAugmentConfig specaug_cfg;
  bool modality_dropout = true;
  // evaluation
  int max_symbols_per_frame = 10;
  int dev_limit = -1;

  std::string resolved;  // the "key = value" table this config came from

  static TrainConfig from(const config::KeyValues& kv);
  void validate() const;
};

// Clean, normalized features are cached once per utterance.
struct Prepared {
  data::Example example;
  MatrixF features;
  std::vector<int> targets;  // quantizer labels, filled for pre-training
};

struct TrainingData {
  rnnt::Vocabulary vocab;
  data::FeatureStats stats;
  std::vector<Prepared> pretrain;
  std::vector<Prepared> train;
  std::vector<data::Example> dev;
  dsp::Waveform cafe;
  dsp::Waveform music;
  dsp::Waveform babble;
};

// Loads the splits a run needs from a corpus directory.
TrainingData load_training_data(const std::filesystem::path& corpus_dir, bool pretrain_split, bool train_split,
                                bool dev_split, int dev_limit = -1);

struct StepStats {
  double lr = 0.0;
  double grad_norm = 0.0;
};

// Adam with global-norm clipping at learning rate schedule.lr(step).
// Tensors missing from `grads` count as zero gradient. Throws
// DivergenceError, leaving params and state untouched, if any gradient is
// non-finite.
StepStats optimizer_step(ParameterTree<float>& params, const std::map<std::string, MatrixF>& grads,
                         ckpt::OptimizerState& state, const TrainConfig& cfg, int64_t step);

// Batches of example indices for one epoch: shuffled, then sorted by
// length inside buckets of 8 batches, then the batch order is shuffled.
std::vector<std::vector<int>> epoch_batches(const std::vector<int>& lengths, int batch_size, uint64_t seed,
                                            int64_t epoch);

struct RunResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;  // fine-tuning only
  double final_loss = 0.0;                // mean over the last 100 updates
  double final_masked_acc = 0.0;
  double initial_loss = 0.0;              // first step
  int64_t skipped_steps = 0;
  std::vector<ckpt::EvalRecord> evals;
};

// Stage 1. A non-empty `resume` checkpoint directory continues that run.
// Writes metrics.jsonl, ckpt-<step>/ every checkpoint_interval steps and
// final/.
RunResult run_pretrain(const TrainConfig& cfg, const TrainingData& data, const std::filesystem::path& out_dir,
                       const std::filesystem::path& resume = {});

// Stage 2 and baselines. `init` supplies the starting tree (already
// transferred); null means a fresh initialization. Additionally writes
// ckpt-<step>/ at every dev evaluation and best/.
RunResult run_finetune(const TrainConfig& cfg, const TrainingData& data, const std::filesystem::path& out_dir,
                       const ParameterTree<float>* init, const std::filesystem::path& resume = {});

// audio_frontend and encoder copied bit-exactly from stage 1; every other
// component of the stage-2 mode freshly initialized; mlm_head dropped.
ParameterTree<float> init_stage2_from_stage1(const ParameterTree<float>& stage1, const model::ModelConfig& cfg,
                                             Mode mode, uint64_t seed);

// Reuses every audio-side tensor (front-end, encoder, and the decoder when
// shapes match) and adds a fresh video front-end.
ParameterTree<float> adapt_audio_to_av(const ParameterTree<float>& audio, const model::ModelConfig& cfg,
                                       uint64_t seed);

// The quantizer shared by every experiment: seed-derived projection and
// codebook plus the frozen corpus statistics.
bestrq::RandomQuantizer shared_quantizer(const TrainConfig& cfg, const data::FeatureStats& stats);

// Per-utterance input audio during fine-tuning: clean with probability
// clean_prob, otherwise cafe or music noise at a uniform SNR.
dsp::Waveform augment_audio(const dsp::Waveform& clean, const TrainConfig& cfg, const TrainingData& data, Rng& rng);

}  // namespace fava::trainer

#endif  // FAVA_TRAINER_HPP_
