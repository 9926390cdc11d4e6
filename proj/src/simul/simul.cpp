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

#include "simulst/simul.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "simulst/error.h"

namespace simulst {

// ---------------------------------------------------------------- model backend

ModelStreamBackend::ModelStreamBackend(const Model& model) : model_(model), tracker_(model.config().blank()) {
  if (!model.config().unidirectional) throw ConfigError("streaming needs a unidirectional encoder");
  input_.dim = model.config().d_feat;
}

std::vector<SegmentEvent> ModelStreamBackend::push(const FeatureSequence& chunk) {
  if (finished_) throw ValueError("push after end of stream");
  if (chunk.frames == 0) return {};
  if (chunk.dim != input_.dim) {
    throw DimensionError("chunk has dimension " + std::to_string(chunk.dim) + ", stream expects " +
                         std::to_string(input_.dim));
  }
  input_.values.insert(input_.values.end(), chunk.values.begin(), chunk.values.end());
  input_.frames += chunk.frames;
  return advance(false);
}

std::vector<SegmentEvent> ModelStreamBackend::finish() {
  if (finished_) return {};
  if (input_.frames == 0) throw ValueError("stream ended without any input frames");
  finished_ = true;
  return advance(true);
}

std::size_t ModelStreamBackend::encoder_frames() const { return final_frames_; }

double ModelStreamBackend::encoder_frame_ms() const {
  return static_cast<double>(model_.config().encoder_frame_ms());
}

double ModelStreamBackend::lookahead_ms() const { return static_cast<double>(effective_lookahead_ms(model_.config())); }

std::vector<SegmentEvent> ModelStreamBackend::advance(bool at_end) {
  const ModelConfig& cfg = model_.config();
  const std::size_t T = input_.frames;
  const std::size_t available = simulst::encoder_frames(cfg, T);
  std::size_t target = final_frames_;
  if (at_end) {
    target = available;
  } else {
    while (target < available && input_horizon(cfg, target) + 1 <= T) ++target;
  }
  std::vector<SegmentEvent> out;
  if (target > final_frames_) {
    NoGradGuard<float> no_grad;
    const auto ac = model_.acoustic_forward(input_);
    const double total_ms = static_cast<double>(available) * encoder_frame_ms();
    for (std::size_t f = final_frames_; f < target; ++f) {
      const std::size_t needed = input_horizon(cfg, f) + 1;
      const double ready = needed <= T ? static_cast<double>(needed * cfg.frame_ms) : total_ms;
      absorb(f, ac.states, ac.probs, ready, out);
    }
  }
  if (at_end && cfg.use_shrink) {
    if (auto last = tracker_.finish()) {
      segments_.push_back(*last);
      out.push_back({*last, static_cast<double>(final_frames_) * encoder_frame_ms()});
    }
  }
  return out;
}

void ModelStreamBackend::absorb(std::size_t frame, const TensorF& states, const TensorF& probs, double ready_ms,
                                std::vector<SegmentEvent>& out) {
  const std::size_t d = states.dim(1), C = probs.dim(1);
  const auto s = states.data().subspan(frame * d, d);
  const auto p = probs.data().subspan(frame * C, C);
  states_.insert(states_.end(), s.begin(), s.end());
  probs_.insert(probs_.end(), p.begin(), p.end());
  const int label = greedy_path<float>(p, 1, C)[0];
  path_.push_back(label);
  final_frames_ = frame + 1;
  if (model_.config().use_shrink) {
    if (auto closed = tracker_.push(label)) {
      segments_.push_back(*closed);
      out.push_back({*closed, ready_ms});
    }
  } else {
    segments_.push_back({frame, frame + 1});
    out.push_back({segments_.back(), ready_ms});
  }
}

TensorF ModelStreamBackend::final_states() const {
  return TensorF::from({final_frames_, model_.config().d_model}, states_);
}

const TensorF& ModelStreamBackend::memory_for(std::size_t segments) {
  if (segments == 0 || segments > segments_.size()) {
    throw ValueError("decoder asked for " + std::to_string(segments) + " segments, " +
                     std::to_string(segments_.size()) + " known");
  }
  if (segments == memory_rows_) return memory_;
  const std::size_t d = model_.config().d_model, C = model_.config().ctc_classes();
  const std::size_t frames = segments_[segments - 1].end;
  NoGradGuard<float> no_grad;
  auto states = TensorF::from({frames, d}, std::vector<float>(states_.begin(), states_.begin() + static_cast<std::ptrdiff_t>(frames * d)));
  auto probs = TensorF::from({frames, C}, std::vector<float>(probs_.begin(), probs_.begin() + static_cast<std::ptrdiff_t>(frames * C)));
  SegmentSet head(std::vector<Segment>(segments_.begin(), segments_.begin() + static_cast<std::ptrdiff_t>(segments)), frames);
  memory_ = model_.memory(states, probs, std::span<const int>(path_).first(frames), head);
  memory_rows_ = segments;
  return memory_;
}

std::vector<double> ModelStreamBackend::next_log_probs(std::span<const int> prefix,
                                                       std::span<const std::size_t> visible) {
  if (visible.size() != prefix.size() + 1) throw DimensionError("one visibility count per decoder position");
  const std::size_t m = *std::max_element(visible.begin(), visible.end());
  const TensorF& mem = memory_for(m);
  std::vector<int> inputs{Vocab::kEos};
  inputs.insert(inputs.end(), prefix.begin(), prefix.end());
  NoGradGuard<float> no_grad;
  const auto logits = model_.decode(mem, inputs, visible);
  const std::size_t V = logits.dim(1);
  const auto row = logits.data().subspan((inputs.size() - 1) * V, V);
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : row) mx = std::max(mx, static_cast<double>(v));
  double total = 0;
  for (float v : row) total += std::exp(static_cast<double>(v) - mx);
  const double log_z = mx + std::log(total);
  std::vector<double> out(V);
  for (std::size_t i = 0; i < V; ++i) out[i] = static_cast<double>(row[i]) - log_z;
  return out;
}

// ---------------------------------------------------------------- session

void SimulConfig::validate() const {
  if (k == 0) throw ConfigError("k must be >= 1");
  if (n == 0) throw ConfigError("n must be >= 1");
  if (beam == 0) throw ConfigError("beam must be >= 1");
}

StreamSession::StreamSession(StreamBackend& backend, const SimulConfig& cfg) : backend_(backend), cfg_(cfg) {
  cfg_.validate();
}

std::vector<SegmentEvent> StreamSession::push_frames(const FeatureSequence& chunk) {
  if (stream_ended_) throw ValueError("push_frames after end of stream");
  auto events = backend_.push(chunk);
  available_.insert(available_.end(), events.begin(), events.end());
  return events;
}

void StreamSession::end_stream() {
  if (stream_ended_) return;
  auto events = backend_.finish();
  available_.insert(available_.end(), events.begin(), events.end());
  stream_ended_ = true;
  if (available_.empty()) throw ValueError("stream produced no segments");
}

double StreamSession::total_ms() const {
  return static_cast<double>(backend_.encoder_frames()) * backend_.encoder_frame_ms();
}

std::size_t StreamSession::budget() const { return wait_budget(cfg_.k, cfg_.n, committed_.size() + 1); }

std::vector<std::size_t> StreamSession::visibility(std::size_t length) const {
  std::vector<std::size_t> v(length, read_);
  std::copy_n(visible_.begin(), std::min(length, visible_.size()), v.begin());
  return v;
}

std::pair<std::vector<int>, bool> StreamSession::search_stride(std::size_t max_tokens) {
  struct Hyp {
    std::vector<int> tokens;
    double score = 0;
  };
  std::vector<Hyp> beams{Hyp{}};
  std::vector<Hyp> ended;
  for (std::size_t step = 0; step < max_tokens && !beams.empty(); ++step) {
    std::vector<Hyp> candidates;
    for (const auto& h : beams) {
      std::vector<int> prefix = committed_;
      prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
      const auto lp = backend_.next_log_probs(prefix, visibility(prefix.size() + 1));
      std::vector<int> order;
      for (std::size_t id = 0; id < lp.size(); ++id) {
        if (static_cast<int>(id) != Vocab::kPad && std::isfinite(lp[id])) order.push_back(static_cast<int>(id));
      }
      const std::size_t keep = std::min(cfg_.beam, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                        [&](int a, int b) { return lp[a] > lp[b] || (lp[a] == lp[b] && a < b); });
      for (std::size_t i = 0; i < keep; ++i) {
        const int id = order[i];
        Hyp next{h.tokens, h.score + lp[static_cast<std::size_t>(id)]};
        if (id == Vocab::kEos) {
          ended.push_back(std::move(next));
        } else {
          next.tokens.push_back(id);
          candidates.push_back(std::move(next));
        }
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(), [](const Hyp& a, const Hyp& b) { return a.score > b.score; });
    if (candidates.size() > cfg_.beam) candidates.resize(cfg_.beam);
    beams = std::move(candidates);
  }
  const Hyp* best = nullptr;
  bool best_ended = false;
  for (const auto& h : beams) {
    if (!best || h.score > best->score) best = &h, best_ended = false;
  }
  for (const auto& h : ended) {
    if (!best || h.score > best->score) best = &h, best_ended = true;
  }
  if (!best) return {{}, true};
  return {best->tokens, best_ended};
}

std::optional<SessionAction> StreamSession::step() {
  if (phase_ == SessionPhase::kFinished) {
    if (!actions_.empty() && actions_.back().kind == ActionKind::kFinish) return std::nullopt;
    SessionAction a{clock_ms_, ActionKind::kFinish, read_, {}};
    actions_.push_back(a);
    return a;
  }
  const std::size_t need = budget();
  bool post_stream = false;
  if (read_ < need) {
    if (read_ < available_.size()) {
      clock_ms_ = std::max(clock_ms_, available_[read_].ready_ms);
      ++read_;
      phase_ = SessionPhase::kReading;
      SessionAction a{clock_ms_, ActionKind::kRead, read_, {}};
      actions_.push_back(a);
      return a;
    }
    if (!stream_ended_) return std::nullopt;
    // Every segment is read and nothing more will come.
    post_stream = true;
    clock_ms_ = std::max(clock_ms_, total_ms());
  }

  phase_ = SessionPhase::kWriting;
  std::size_t max_tokens = cfg_.n;
  if (post_stream) {
    const std::size_t cap = 2 * available_.size() + cfg_.extra_length;
    max_tokens = committed_.size() >= cap ? 0 : std::min(max_tokens, cap - committed_.size());
  }
  auto [tokens, eos] = max_tokens == 0 ? std::pair<std::vector<int>, bool>{{}, true} : search_stride(max_tokens);
  const bool capped = post_stream && committed_.size() + tokens.size() >= 2 * available_.size() + cfg_.extra_length;
  if (eos || capped) phase_ = SessionPhase::kFinished;
  if (tokens.empty()) return step();
  const std::size_t visible = std::min(need, read_);
  for (int t : tokens) {
    committed_.push_back(t);
    delays_.push_back(clock_ms_);
    visible_.push_back(visible);
  }
  SessionAction a{clock_ms_, ActionKind::kWrite, read_, tokens};
  actions_.push_back(a);
  return a;
}

void StreamSession::run() {
  while (phase_ != SessionPhase::kFinished || actions_.empty() || actions_.back().kind != ActionKind::kFinish) {
    if (!step()) break;
  }
}

SessionResult StreamSession::finalize() {
  end_stream();
  run();
  SessionResult r;
  r.hypothesis = committed_;
  r.visible_segments = visible_;
  r.latency.delays_ms = delays_;
  r.latency.source_frames = backend_.encoder_frames();
  r.latency.frame_ms = backend_.encoder_frame_ms();
  r.latency.lookahead_ms = backend_.lookahead_ms();
  r.actions = actions_;
  r.segments = available_.size();
  return r;
}

SessionResult simulate(const Model& model, const FeatureSequence& features, const SimulConfig& cfg,
                       std::size_t chunk_frames) {
  ModelStreamBackend backend(model);
  StreamSession session(backend, cfg);
  if (chunk_frames == 0 || chunk_frames >= features.frames) {
    session.push_frames(features);
    session.run();
  } else {
    for (std::size_t begin = 0; begin < features.frames; begin += chunk_frames) {
      const std::size_t end = std::min(features.frames, begin + chunk_frames);
      FeatureSequence chunk(end - begin, features.dim,
                            std::vector<float>(features.values.begin() + static_cast<std::ptrdiff_t>(begin * features.dim),
                                               features.values.begin() + static_cast<std::ptrdiff_t>(end * features.dim)));
      session.push_frames(chunk);
      session.run();
    }
  }
  return session.finalize();
}

Trace make_trace(const std::string& utterance, const SessionResult& result, const Vocab& target_vocab,
                 const std::string& reference) {
  Trace t;
  t.utterance = utterance;
  t.source_frames = result.latency.source_frames;
  t.frame_ms = result.latency.frame_ms;
  t.reference_length = reference.empty() ? result.latency.reference_length : tokenize(reference).size();
  t.lookahead_ms = result.latency.lookahead_ms;
  t.reference = reference;
  for (const auto& a : result.actions) {
    TraceAction ta{a.ms, a.kind, {}};
    if (a.kind == ActionKind::kRead) ta.payload = std::to_string(a.segments_read);
    if (a.kind == ActionKind::kWrite) ta.payload = target_vocab.decode(a.tokens);
    t.actions.push_back(std::move(ta));
  }
  return t;
}

}  // namespace simulst
