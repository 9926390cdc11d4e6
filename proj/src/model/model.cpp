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

#include "simulst/model.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "simulst/error.h"

namespace simulst {

// ---------------------------------------------------------------- config

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (d_feat == 0) fail("d_feat must be >= 1");
  if (source_vocab <= static_cast<std::size_t>(Vocab::kFirstToken)) fail("source_vocab must exceed the reserved ids");
  if (target_vocab <= static_cast<std::size_t>(Vocab::kFirstToken)) fail("target_vocab must exceed the reserved ids");
  if (n_blocks == 0 || n_blocks > 8) fail("n_blocks must lie in [1, 8]");
  if (convs_per_block < 2) fail("convs_per_block must be >= 2 (the second conv downsamples)");
  if (conv_kernel == 0) fail("conv_kernel must be >= 1");
  if (conv_lookahead.size() != convs_per_block) {
    fail("conv_lookahead needs one entry per conv in a block (" + std::to_string(convs_per_block) + ")");
  }
  for (std::size_t l : conv_lookahead) {
    if (l + 1 > conv_kernel) fail("conv lookahead " + std::to_string(l) + " exceeds kernel width - 1");
  }
  if (d_model < 2) fail("d_model must be >= 2");
  if (n_heads == 0 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (d_ff == 0) fail("d_ff must be >= 1");
  shrink.validate();
  if (!(blank_penalty_weight >= 0) || !std::isfinite(blank_penalty_weight)) fail("lambda must be finite and >= 0");
  if (!(ctc_weight >= 0) || !std::isfinite(ctc_weight)) fail("alpha must be finite and >= 0");
  if (wait_k == 0) fail("k must be >= 1");
  if (stride_n == 0) fail("n must be >= 1");
  if (!(dropout >= 0 && dropout < 1)) fail("dropout must lie in [0, 1)");
  if (frame_ms == 0) fail("frame_ms must be >= 1");
  if (!unidirectional && wait_k != kWaitAll) fail("a bidirectional encoder requires full-sentence decoding (k=inf)");
}

std::string ModelConfig::fingerprint() const {
  std::ostringstream os;
  os << "d_feat=" << d_feat << ";src=" << source_vocab << ";tgt=" << target_vocab << ";blocks=" << n_blocks
     << ";convs=" << convs_per_block << ";kernel=" << conv_kernel << ";lookahead=";
  for (std::size_t i = 0; i < conv_lookahead.size(); ++i) os << (i ? "," : "") << conv_lookahead[i];
  os << ";layers=" << layers_per_block << ";d=" << d_model << ";heads=" << n_heads << ";ff=" << d_ff
     << ";semantic=" << semantic_layers << ";decoder=" << decoder_layers << ";uni=" << unidirectional
     << ";gd=" << gradual_downsampling << ";shrink=" << use_shrink;
  return os.str();
}

std::vector<ConvSpec> conv_stack(const ModelConfig& cfg) {
  std::vector<ConvSpec> stack;
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    for (std::size_t c = 0; c < cfg.convs_per_block; ++c) stack.push_back({c == 1 ? 2u : 1u, cfg.conv_lookahead[c]});
  }
  return stack;
}

std::size_t input_horizon(std::span<const ConvSpec> stack, std::size_t frame) {
  std::size_t idx = frame;
  for (auto it = stack.rbegin(); it != stack.rend(); ++it) idx = idx * it->stride + it->lookahead;
  return idx;
}

std::size_t input_horizon(const ModelConfig& cfg, std::size_t frame) { return input_horizon(conv_stack(cfg), frame); }

std::size_t effective_lookahead_ms(std::span<const ConvSpec> stack, std::size_t frame_ms) {
  return input_horizon(stack, 0) * frame_ms;
}

std::size_t effective_lookahead_ms(const ModelConfig& cfg) {
  return effective_lookahead_ms(conv_stack(cfg), cfg.frame_ms);
}

std::size_t encoder_frames(const ModelConfig& cfg, std::size_t input_frames) {
  std::size_t t = input_frames;
  for (const auto& c : conv_stack(cfg)) t = (t + c.stride - 1) / c.stride;
  return t;
}

std::size_t wait_budget(std::size_t k, std::size_t n, std::size_t t) {
  if (t == 0) throw ValueError("target positions are 1-based");
  if (k == kWaitAll) return kWaitAll;
  return n * ((t - 1) / n) + k;
}

std::vector<std::size_t> visible_segments(std::size_t k, std::size_t n, std::size_t target_len, std::size_t segments) {
  if (k == 0 || n == 0) throw ValueError("k and n must be >= 1");
  if (segments == 0) throw ValueError("cross-attention needs at least one source segment");
  std::vector<std::size_t> counts(target_len);
  for (std::size_t t = 1; t <= target_len; ++t) counts[t - 1] = std::min(wait_budget(k, n, t), segments);
  return counts;
}

AttentionMask build_cross_attention_mask(std::size_t k, std::size_t n, std::size_t target_len, std::size_t segments) {
  const auto counts = visible_segments(k, n, target_len, segments);
  return AttentionMask::prefix(counts, segments);
}

TensorF sinusoidal_positions(std::size_t rows, std::size_t d) {
  std::vector<float> values(rows * d);
  for (std::size_t pos = 0; pos < rows; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * rate;
      values[pos * d + i] = static_cast<float>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return TensorF::from({rows, d}, std::move(values));
}

// ---------------------------------------------------------------- construction

TensorF Model::make_param(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<float> values(shape_size(shape));
  for (auto& v : values) v = static_cast<float>(dist(rng));
  auto t = TensorF::from(std::move(shape), std::move(values), true);
  params_.push_back({name, t});
  return t;
}

TensorF Model::make_constant(const std::string& name, Shape shape, float value) {
  auto t = TensorF::full(std::move(shape), value, true);
  params_.push_back({name, t});
  return t;
}

Model::Linear Model::make_linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  Linear l;
  l.weight = make_param(name + ".weight", {in, out}, in, rng);
  l.bias = make_constant(name + ".bias", {out}, 0.0f);
  return l;
}

Model::Norm Model::make_norm(const std::string& name) {
  return Norm{make_constant(name + ".gain", {cfg_.d_model}, 1.0f), make_constant(name + ".bias", {cfg_.d_model}, 0.0f)};
}

Model::Attention Model::make_attention(const std::string& name, std::mt19937_64& rng) {
  const std::size_t d = cfg_.d_model;
  return Attention{make_linear(name + ".q", d, d, rng), make_linear(name + ".k", d, d, rng),
                   make_linear(name + ".v", d, d, rng), make_linear(name + ".o", d, d, rng)};
}

Model::FeedForward Model::make_ff(const std::string& name, std::mt19937_64& rng) {
  return FeedForward{make_linear(name + ".in", cfg_.d_model, cfg_.d_ff, rng),
                     make_linear(name + ".out", cfg_.d_ff, cfg_.d_model, rng)};
}

Model::EncoderLayer Model::make_encoder_layer(const std::string& name, std::mt19937_64& rng) {
  EncoderLayer layer;
  layer.ln_attn = make_norm(name + ".ln_attn");
  layer.attn = make_attention(name + ".attn", rng);
  layer.ln_ff = make_norm(name + ".ln_ff");
  layer.ff = make_ff(name + ".ff", rng);
  return layer;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg_.d_model;
  const std::size_t w = cfg_.conv_kernel;

  const auto stack = conv_stack(cfg_);
  std::size_t in = cfg_.d_feat;
  for (std::size_t i = 0; i < stack.size(); ++i) {
    const std::string name = "acoustic.conv" + std::to_string(i);
    Conv conv;
    conv.kernel = make_param(name + ".kernel", {w, in, d}, w * in, rng);
    conv.bias = make_constant(name + ".bias", {d}, 0.0f);
    conv.stride = stack[i].stride;
    conv.lookahead = stack[i].lookahead;
    convs_.push_back(conv);
    in = d;
  }
  for (std::size_t b = 0; b < cfg_.n_blocks; ++b) {
    const std::size_t after = cfg_.gradual_downsampling ? (b + 1) * cfg_.convs_per_block - 1 : stack.size() - 1;
    for (std::size_t l = 0; l < cfg_.layers_per_block; ++l) {
      acoustic_layers_.push_back(
          make_encoder_layer("acoustic.block" + std::to_string(b) + ".layer" + std::to_string(l), rng));
      layer_after_conv_.push_back(after);
    }
  }
  acoustic_norm_ = make_norm("acoustic.ln_out");
  ctc_hidden_ = make_linear("ctc.hidden", d, d, rng);
  ctc_out_ = make_linear("ctc.out", d, cfg_.ctc_classes(), rng);

  if (cfg_.use_shrink) {
    for (std::size_t l = 0; l < cfg_.semantic_layers; ++l) {
      semantic_layers_.push_back(make_encoder_layer("semantic.layer" + std::to_string(l), rng));
    }
    if (cfg_.semantic_layers > 0) semantic_norm_ = make_norm("semantic.ln_out");
  }

  target_embedding_ = make_param("decoder.embedding", {cfg_.target_vocab, d}, d, rng);
  for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
    const std::string name = "decoder.layer" + std::to_string(l);
    DecoderLayer layer;
    layer.ln_self = make_norm(name + ".ln_self");
    layer.self_attn = make_attention(name + ".self_attn", rng);
    layer.ln_cross = make_norm(name + ".ln_cross");
    layer.cross_attn = make_attention(name + ".cross_attn", rng);
    layer.ln_ff = make_norm(name + ".ln_ff");
    layer.ff = make_ff(name + ".ff", rng);
    decoder_layers_.push_back(layer);
  }
  decoder_norm_ = make_norm("decoder.ln_out");
  output_ = make_linear("decoder.output", d, cfg_.target_vocab, rng);
}

void Model::set_runtime_config(const ModelConfig& cfg) {
  cfg.validate();
  if (cfg.fingerprint() != cfg_.fingerprint()) {
    throw ConfigError("architecture mismatch: model " + cfg_.fingerprint() + " vs config " + cfg.fingerprint());
  }
  cfg_ = cfg;
}

std::vector<TensorF> Model::parameter_tensors() const {
  std::vector<TensorF> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

bool Model::is_encoder_parameter(const std::string& name) const {
  return name.rfind("acoustic.", 0) == 0 || name.rfind("ctc.", 0) == 0;
}

std::vector<TensorF> Model::encoder_parameters() const {
  std::vector<TensorF> out;
  for (const auto& p : params_) {
    if (is_encoder_parameter(p.name)) out.push_back(p.tensor);
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

// ---------------------------------------------------------------- building blocks

TensorF Model::linear(const Linear& l, const TensorF& x) const { return add_bias(matmul(x, l.weight), l.bias); }

TensorF Model::norm(const Norm& n, const TensorF& x) const { return layer_norm(x, n.gain, n.bias); }

TensorF Model::drop(const TensorF& x, const ForwardContext& ctx) const {
  if (!ctx.training || cfg_.dropout == 0) return x;
  if (!ctx.rng) throw ValueError("training forward needs a random generator for dropout");
  return dropout(x, cfg_.dropout, *ctx.rng);
}

TensorF Model::attend(const Attention& a, const TensorF& x, const TensorF& memory, const AttentionMask& mask) const {
  auto q = linear(a.q, x);
  auto k = linear(a.k, memory);
  auto v = linear(a.v, memory);
  return linear(a.o, masked_attention(q, k, v, mask, static_cast<int>(cfg_.n_heads)));
}

TensorF Model::encoder_layer(const EncoderLayer& layer, const TensorF& x, const ForwardContext& ctx) const {
  const std::size_t T = x.dim(0);
  const AttentionMask mask = cfg_.unidirectional ? AttentionMask::causal(T) : AttentionMask::full(T, T);
  auto h = norm(layer.ln_attn, x);
  auto y = add(x, drop(attend(layer.attn, h, h, mask), ctx));
  h = norm(layer.ln_ff, y);
  auto f = linear(layer.ff.out, relu(linear(layer.ff.in, h)));
  return add(y, drop(f, ctx));
}

// ---------------------------------------------------------------- forward passes

AcousticOutput Model::acoustic_forward(const FeatureSequence& features, const ForwardContext& ctx) const {
  if (features.dim != cfg_.d_feat) {
    throw DimensionError("features have dimension " + std::to_string(features.dim) + ", model expects " +
                         std::to_string(cfg_.d_feat));
  }
  if (features.frames == 0) throw DimensionError("empty feature sequence");
  TensorF x = TensorF::from({features.frames, features.dim}, features.values);
  std::size_t next_layer = 0;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const Conv& c = convs_[i];
    x = relu(conv1d_lookahead(x, c.kernel, c.bias, static_cast<int>(c.stride), static_cast<int>(c.lookahead)));
    while (next_layer < acoustic_layers_.size() && layer_after_conv_[next_layer] == i) {
      x = encoder_layer(acoustic_layers_[next_layer++], x, ctx);
    }
  }
  AcousticOutput out;
  out.states = norm(acoustic_norm_, x);
  out.logits = linear(ctc_out_, relu(linear(ctc_hidden_, out.states)));
  out.probs = softmax(out.logits);
  return out;
}

AcousticOutput Model::acoustic_encode(const FeatureSequence& features, const ForwardContext& ctx) const {
  if (features.frames < cfg_.downsample_factor()) {
    throw ValueError("input of " + std::to_string(features.frames) + " frames is shorter than the downsampling factor " +
                     std::to_string(cfg_.downsample_factor()));
  }
  return acoustic_forward(features, ctx);
}

TensorF Model::semantic_encode(const TensorF& shrunk, const ForwardContext& ctx) const {
  const std::size_t S = shrunk.dim(0);
  if (S == 0) throw DimensionError("semantic encoder needs at least one segment");
  auto x = drop(add(shrunk, sinusoidal_positions(S, cfg_.d_model)), ctx);
  for (const auto& layer : semantic_layers_) x = encoder_layer(layer, x, ctx);
  if (!semantic_layers_.empty()) x = norm(semantic_norm_, x);
  return x;
}

SegmentSet Model::segment(std::span<const int> path) const {
  if (cfg_.use_shrink) return detect_boundaries(path, cfg_.blank());
  std::vector<Segment> frames;
  for (std::size_t t = 0; t < path.size(); ++t) frames.push_back({t, t + 1});
  return SegmentSet(std::move(frames), path.size());
}

TensorF Model::memory(const TensorF& states, const TensorF& probs, std::span<const int> path,
                      const SegmentSet& segments, const ForwardContext& ctx) const {
  if (!cfg_.use_shrink) return states;
  auto blank_probs = column(probs, static_cast<std::size_t>(cfg_.blank()));
  auto shrunk = shrink(states, blank_probs, path, cfg_.blank(), segments, cfg_.shrink);
  return semantic_encode(shrunk, ctx);
}

EncoderOutput Model::encode(const FeatureSequence& features, const ForwardContext& ctx) const {
  auto ac = acoustic_encode(features, ctx);
  EncoderOutput out;
  const std::size_t T = ac.states.dim(0);
  out.acoustic_states = ac.states;
  out.path = greedy_path<float>(ac.probs.data(), T, cfg_.ctc_classes());
  out.posteriors = CtcPosteriorGrid::from_logits(
      T, cfg_.ctc_classes(), std::vector<double>(ac.logits.data().begin(), ac.logits.data().end()));
  out.segments = segment(out.path);
  out.memory = memory(ac.states, ac.probs, out.path, out.segments, ctx);
  return out;
}

TensorF Model::decode(const TensorF& memory, std::span<const int> inputs, std::span<const std::size_t> visible,
                      const ForwardContext& ctx) const {
  const std::size_t len = inputs.size();
  if (len == 0) throw DimensionError("decoder needs at least one input token");
  if (visible.size() != len) throw DimensionError("one visibility count per decoder position is required");
  const std::size_t S = memory.dim(0);
  for (int id : inputs) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.target_vocab) {
      throw ValueError("decoder input id " + std::to_string(id) + " outside target vocabulary");
    }
  }
  const auto self_mask = AttentionMask::causal(len);
  const auto cross_mask = AttentionMask::prefix(visible, S);
  auto x = add(scale(embedding(target_embedding_, inputs), std::sqrt(static_cast<float>(cfg_.d_model))),
               sinusoidal_positions(len, cfg_.d_model));
  x = drop(x, ctx);
  for (const auto& layer : decoder_layers_) {
    auto h = norm(layer.ln_self, x);
    x = add(x, drop(attend(layer.self_attn, h, h, self_mask), ctx));
    h = norm(layer.ln_cross, x);
    x = add(x, drop(attend(layer.cross_attn, h, memory, cross_mask), ctx));
    h = norm(layer.ln_ff, x);
    x = add(x, drop(linear(layer.ff.out, relu(linear(layer.ff.in, h))), ctx));
  }
  return linear(output_, norm(decoder_norm_, x));
}

TrainOutput Model::forward_train(const Utterance& utt, const TrainObjective& objective,
                                 const ForwardContext& ctx) const {
  TrainOutput out;
  auto ac = acoustic_encode(utt.features, ctx);
  const std::size_t T = ac.states.dim(0);
  const auto path = greedy_path<float>(ac.probs.data(), T, cfg_.ctc_classes());
  auto& diag = out.diagnostics;
  diag.encoder_frames = T;
  diag.transcript_length = utt.transcript.size();
  diag.blank_frames = static_cast<std::size_t>(std::count(path.begin(), path.end(), cfg_.blank()));

  const bool use_ctc = objective.ctc_weight > 0;
  if (use_ctc) {
    if (utt.transcript.empty()) throw ValueError("utterance " + utt.id + " has an empty transcript");
    if (T < min_ctc_frames(utt.transcript)) {
      diag.skipped = true;
      return out;
    }
    auto nll = ctc_nll(log_softmax(ac.logits), utt.transcript);
    out.ctc_loss = objective.blank_penalty_weight > 0
                       ? add(nll, scale(blank_penalty(ac.probs, cfg_.blank_penalty_mode),
                                        static_cast<float>(objective.blank_penalty_weight)))
                       : nll;
  }
  if (objective.translation) {
    if (utt.translation.empty()) throw ValueError("utterance " + utt.id + " has an empty translation");
    const auto segments = segment(path);
    diag.segments = segments.size();
    auto mem = memory(ac.states, ac.probs, path, segments, ctx);
    std::vector<int> inputs{Vocab::kEos};
    inputs.insert(inputs.end(), utt.translation.begin(), utt.translation.end());
    std::vector<int> targets(utt.translation.begin(), utt.translation.end());
    targets.push_back(Vocab::kEos);
    const auto visible = visible_segments(cfg_.wait_k, cfg_.stride_n, inputs.size(), mem.dim(0));
    out.st_loss = cross_entropy(decode(mem, inputs, visible, ctx), targets, Vocab::kPad);
  } else {
    diag.segments = segment(path).size();
  }

  if (out.st_loss.defined() && out.ctc_loss.defined()) {
    out.total = add(out.st_loss, scale(out.ctc_loss, static_cast<float>(objective.ctc_weight)));
  } else if (out.st_loss.defined()) {
    out.total = out.st_loss;
  } else if (out.ctc_loss.defined()) {
    out.total = scale(out.ctc_loss, static_cast<float>(objective.ctc_weight));
  } else {
    throw ValueError("training objective has neither a translation nor a CTC term");
  }
  return out;
}

}  // namespace simulst
