// Copyright 2026 The simulst Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Two-stage training (CTC pre-training of the acoustic encoder, then joint
// fine-tuning), checkpoints, checkpoint averaging and evaluation.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "simulst/ctc.h"
#include "simulst/data.h"
#include "simulst/metrics.h"
#include "simulst/model.h"
#include "simulst/optim.h"
#include "simulst/simul.h"

namespace simulst {

enum class Stage { kPretrain, kFinetune };

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);

struct TrainConfig {
  double lr = 2e-3;
  std::int64_t warmup_steps = 500;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  // Frames per batch (padded); an utterance longer than this forms its own
  // batch.
  std::size_t max_batch_frames = 400;
  std::uint64_t seed = 1;
  // Leave the validation split out of training.
  bool hold_out_validation = true;

  void validate() const;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
  bool operator==(const NamedArray&) const = default;
};

// Everything needed to continue a run bit for bit. Moments are stored per
// named parameter in optimizer order.
struct Checkpoint {
  std::string fingerprint;
  Stage stage = Stage::kPretrain;
  std::vector<NamedArray> parameters;
  std::vector<std::string> optimizer_parameters;
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
  std::int64_t step = 0;
  std::size_t epoch = 0;
  std::string rng_state;

  bool operator==(const Checkpoint&) const = default;
};

// File layout: "RTCK", u32 little-endian header length, JSON header (names,
// shapes, scalars), then float32 little-endian payload in header order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint parameters into the model; ConfigError on a fingerprint
// mismatch, DimensionError on missing or misshapen tensors.
void load_parameters(Model& model, const Checkpoint& ck);
std::vector<NamedArray> snapshot_parameters(const Model& model);

// Mean of every parameter; optimizer state, step and RNG from the last.
Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints);
Checkpoint average_checkpoints(std::span<const std::filesystem::path> paths);

struct StepRecord {
  std::int64_t step = 0;
  double lr = 0;
  double st_loss = 0;
  double ctc_loss = 0;
  double blank_fraction = 0;
};

struct EpochStats {
  std::size_t steps = 0;
  std::size_t utterances = 0;
  std::size_t skipped = 0;  // infeasible CTC alignment
  double mean_st_loss = 0;
  double mean_ctc_loss = 0;
  double blank_fraction = 0;
};

// Writes the TSV header once and one row per step.
class TrainLog {
 public:
  // write_header = false when appending to an existing log.
  explicit TrainLog(std::ostream* out, bool write_header = true) : out_(out), header_written_(!write_header) {}
  void write(const StepRecord& r);

 private:
  std::ostream* out_;
  bool header_written_;
};

// Pre-training updates the acoustic encoder and CTC head on L'_CTC only;
// fine-tuning updates everything on L_ST + alpha * L'_CTC.
class Trainer {
 public:
  Trainer(Model& model, Stage stage, const TrainConfig& cfg);

  // Restores parameters, and optimizer/step/epoch/RNG when the checkpoint
  // comes from the same stage; a pre-training checkpoint starts fine-tuning
  // from fresh optimizer state.
  void restore(const Checkpoint& ck);

  // One pass over the (training part of the) corpus. Throws NumericError on
  // a non-finite loss.
  EpochStats train_epoch(const Corpus& corpus, TrainLog* log = nullptr);
  Checkpoint checkpoint() const;

  std::size_t epoch() const { return epoch_; }
  std::int64_t step() const { return opt_.step; }
  Stage stage() const { return stage_; }

 private:
  TrainObjective objective() const;

  Model& model_;
  Stage stage_;
  TrainConfig cfg_;
  std::vector<std::string> names_;
  std::vector<TensorF> params_;
  OptimizerState<float> opt_;
  std::size_t epoch_ = 0;
  std::mt19937_64 rng_;
};

Checkpoint pretrain_ctc(Model& model, const Corpus& corpus, const TrainConfig& cfg, std::size_t epochs,
                        TrainLog* log = nullptr);
Checkpoint finetune(Model& model, const Corpus& corpus, const Checkpoint& start, const TrainConfig& cfg,
                    std::size_t epochs, TrainLog* log = nullptr);

// Utterance indices on either side of the validation split.
std::vector<std::size_t> split_indices(const Corpus& corpus, bool validation);

// Teacher-forced mean L_ST (per target token) without dropout.
double validation_st_loss(const Model& model, const Corpus& corpus, std::span<const std::size_t> indices);
// Mean CTC NLL per utterance over the indices (infeasible ones skipped).
double validation_ctc_loss(const Model& model, const Corpus& corpus, std::span<const std::size_t> indices);

struct EvalReport {
  double bleu = 0;
  double mean_ap = 0;
  double mean_al = 0;
  ShrinkQuality shrink;
  // Position-wise matches over reference tokens.
  double token_accuracy = 0;
  double blank_fraction = 0;
  std::size_t utterances = 0;
  std::vector<Trace> traces;
};

// Runs the streaming engine on every indexed utterance. Utterances are
// independent, so results do not depend on `threads`.
EvalReport evaluate(const Model& model, const Corpus& corpus, std::span<const std::size_t> indices,
                    const SimulConfig& simul, std::size_t chunk_frames = 0, std::size_t threads = 1);
void write_eval_report(std::ostream& out, const EvalReport& report, const SimulConfig& simul);

}  // namespace simulst
