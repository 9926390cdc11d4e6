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

// The translation network: a streaming acoustic encoder of Conv-Transformer
// blocks with a CTC head, segment shrinking, a causal semantic encoder, and a
// decoder whose cross-attention follows a wait-k/stride-n schedule.

#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "simulst/ctc.h"
#include "simulst/data.h"
#include "simulst/ops.h"
#include "simulst/shrink.h"
#include "simulst/tensor.h"

namespace simulst {

// Wait budget meaning "every segment" (full-sentence decoding).
inline constexpr std::size_t kWaitAll = std::numeric_limits<std::size_t>::max();

struct ModelConfig {
  std::size_t d_feat = 80;
  std::size_t source_vocab = 23;  // including reserved ids; CTC adds a blank
  std::size_t target_vocab = 23;

  std::size_t n_blocks = 3;
  std::size_t convs_per_block = 3;  // the second conv of each block has stride 2
  std::size_t conv_kernel = 3;
  // Right context of each conv within a block, in that conv's input frames.
  std::vector<std::size_t> conv_lookahead = {1, 1, 0};
  std::size_t layers_per_block = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t semantic_layers = 6;
  std::size_t decoder_layers = 4;
  bool unidirectional = true;
  // false: every strided conv runs before any encoder Transformer layer.
  bool gradual_downsampling = true;
  // false: the decoder reads acoustic frames directly (no shrinking, no
  // semantic encoder) under a frame-level wait schedule.
  bool use_shrink = true;

  ShrinkConfig shrink;
  double blank_penalty_weight = 0.5;  // lambda
  BlankPenaltyMode blank_penalty_mode = BlankPenaltyMode::kArgmaxBlankFrames;
  double ctc_weight = 1.0;  // alpha
  std::size_t wait_k = 3;   // kWaitAll for full-sentence
  std::size_t stride_n = 2;
  double dropout = 0.1;
  std::size_t frame_ms = 10;

  void validate() const;
  std::size_t ctc_classes() const { return source_vocab + 1; }
  int blank() const { return static_cast<int>(source_vocab); }
  std::size_t downsample_factor() const { return std::size_t{1} << n_blocks; }
  // Milliseconds per encoder output frame.
  std::size_t encoder_frame_ms() const { return frame_ms * downsample_factor(); }
  // Architecture-only summary; checkpoints must agree on it.
  std::string fingerprint() const;
};

// One conv of the acoustic stack in execution order.
struct ConvSpec {
  std::size_t stride = 1;
  std::size_t lookahead = 0;
};

std::vector<ConvSpec> conv_stack(const ModelConfig& cfg);

// Last input frame (0-based) that output frame `frame` of the conv stack
// reads, ignoring the clip at the end of the input.
std::size_t input_horizon(std::span<const ConvSpec> stack, std::size_t frame);
std::size_t input_horizon(const ModelConfig& cfg, std::size_t frame);

// Right context of the first output frame in milliseconds.
std::size_t effective_lookahead_ms(std::span<const ConvSpec> stack, std::size_t frame_ms = 10);
std::size_t effective_lookahead_ms(const ModelConfig& cfg);

// ceil(T_x / 2^n_blocks).
std::size_t encoder_frames(const ModelConfig& cfg, std::size_t input_frames);

// Visible segment count for 1-based target position t before capping:
// n * floor((t - 1) / n) + k.
std::size_t wait_budget(std::size_t k, std::size_t n, std::size_t t);
std::vector<std::size_t> visible_segments(std::size_t k, std::size_t n, std::size_t target_len, std::size_t segments);
AttentionMask build_cross_attention_mask(std::size_t k, std::size_t n, std::size_t target_len, std::size_t segments);

// Sinusoidal position table [rows x d].
TensorF sinusoidal_positions(std::size_t rows, std::size_t d);

struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

struct NamedParameter {
  std::string name;
  TensorF tensor;
};

struct AcousticOutput {
  TensorF states;  // [T' x d_model]
  TensorF logits;  // [T' x classes]
  TensorF probs;   // softmax(logits)
};

struct EncoderOutput {
  TensorF acoustic_states;
  CtcPosteriorGrid posteriors;
  std::vector<int> path;
  SegmentSet segments;
  TensorF memory;  // [S x d_model], what the decoder attends
};

struct TrainObjective {
  bool translation = true;  // include L_ST
  double ctc_weight = 1.0;  // 0 skips the CTC term
  double blank_penalty_weight = 0.5;
};

struct ForwardDiagnostics {
  std::size_t encoder_frames = 0;
  std::size_t segments = 0;
  std::size_t blank_frames = 0;
  std::size_t transcript_length = 0;
  bool skipped = false;  // CTC alignment infeasible
};

struct TrainOutput {
  TensorF total;
  TensorF st_loss;   // undefined when not requested or skipped
  TensorF ctc_loss;  // undefined when weight 0 or skipped
  ForwardDiagnostics diagnostics;
};

class Model {
 public:
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrices, zero biases, unit
  // layer-norm gains.
  Model(const ModelConfig& cfg, std::uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  // Training-time switches that do not change the architecture.
  void set_runtime_config(const ModelConfig& cfg);

  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::vector<TensorF> parameter_tensors() const;
  // Acoustic encoder plus CTC head.
  std::vector<TensorF> encoder_parameters() const;
  bool is_encoder_parameter(const std::string& name) const;
  std::size_t parameter_count() const;

  // No length precondition; used by streaming on partial input.
  AcousticOutput acoustic_forward(const FeatureSequence& features, const ForwardContext& ctx = {}) const;
  // Throws ValueError when T_x < 2^n_blocks.
  AcousticOutput acoustic_encode(const FeatureSequence& features, const ForwardContext& ctx = {}) const;
  TensorF semantic_encode(const TensorF& shrunk, const ForwardContext& ctx = {}) const;

  // Segment states the decoder attends: shrink + semantic encoder, or the
  // acoustic frames themselves with use_shrink off.
  TensorF memory(const TensorF& states, const TensorF& probs, std::span<const int> path, const SegmentSet& segments,
                 const ForwardContext& ctx = {}) const;
  // Segmentation from the greedy path, or one segment per frame with
  // use_shrink off.
  SegmentSet segment(std::span<const int> path) const;

  EncoderOutput encode(const FeatureSequence& features, const ForwardContext& ctx = {}) const;

  // Logits [len x target_vocab] for decoder inputs (starting with EOS); row i
  // attends memory rows [0, visible[i]).
  TensorF decode(const TensorF& memory, std::span<const int> inputs, std::span<const std::size_t> visible,
                 const ForwardContext& ctx = {}) const;

  TrainOutput forward_train(const Utterance& utt, const TrainObjective& objective, const ForwardContext& ctx) const;

 private:
  struct Linear {
    TensorF weight;  // [in x out]
    TensorF bias;    // [out]
  };
  struct Norm {
    TensorF gain;
    TensorF bias;
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct FeedForward {
    Linear in, out;
  };
  struct EncoderLayer {
    Norm ln_attn;
    Attention attn;
    Norm ln_ff;
    FeedForward ff;
  };
  struct DecoderLayer {
    Norm ln_self;
    Attention self_attn;
    Norm ln_cross;
    Attention cross_attn;
    Norm ln_ff;
    FeedForward ff;
  };
  struct Conv {
    TensorF kernel;
    TensorF bias;
    std::size_t stride;
    std::size_t lookahead;
  };

  TensorF make_param(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64& rng);
  TensorF make_constant(const std::string& name, Shape shape, float value);
  Linear make_linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);
  Norm make_norm(const std::string& name);
  Attention make_attention(const std::string& name, std::mt19937_64& rng);
  FeedForward make_ff(const std::string& name, std::mt19937_64& rng);
  EncoderLayer make_encoder_layer(const std::string& name, std::mt19937_64& rng);

  TensorF linear(const Linear& l, const TensorF& x) const;
  TensorF norm(const Norm& n, const TensorF& x) const;
  TensorF drop(const TensorF& x, const ForwardContext& ctx) const;
  TensorF attend(const Attention& a, const TensorF& x, const TensorF& memory, const AttentionMask& mask) const;
  TensorF encoder_layer(const EncoderLayer& layer, const TensorF& x, const ForwardContext& ctx) const;

  ModelConfig cfg_;
  std::vector<NamedParameter> params_;
  std::vector<Conv> convs_;                  // execution order
  std::vector<EncoderLayer> acoustic_layers_;
  std::vector<std::size_t> layer_after_conv_;  // acoustic layers run after conv i
  Norm acoustic_norm_;
  Linear ctc_hidden_, ctc_out_;
  std::vector<EncoderLayer> semantic_layers_;
  Norm semantic_norm_;
  TensorF target_embedding_;
  std::vector<DecoderLayer> decoder_layers_;
  Norm decoder_norm_;
  Linear output_;
};

}  // namespace simulst
