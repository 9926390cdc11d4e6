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

// Streaming wait-k/stride-n inference.
//
// A StreamSession runs its read/write schedule in audio time: every segment
// carries the amount of audio (ms) after which it is known, and reading it
// advances the session clock to that point. Decisions therefore depend only on
// the segment stream and the scores, never on how input frames were chunked.

#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "simulst/ctc.h"
#include "simulst/data.h"
#include "simulst/metrics.h"
#include "simulst/model.h"

namespace simulst {

struct SegmentEvent {
  Segment segment;
  double ready_ms = 0;  // audio consumed when the segment became known
  bool operator==(const SegmentEvent&) const = default;
};

// Source encoder plus target scorer driven by a session.
class StreamBackend {
 public:
  virtual ~StreamBackend() = default;

  // Newly completed segments after appending `chunk`.
  virtual std::vector<SegmentEvent> push(const FeatureSequence& chunk) = 0;
  // Closes the stream; returns the remaining segments (at least one in
  // total over the stream).
  virtual std::vector<SegmentEvent> finish() = 0;
  // Encoder frames |x| and ms per encoder frame; valid after finish().
  virtual std::size_t encoder_frames() const = 0;
  virtual double encoder_frame_ms() const = 0;
  virtual double lookahead_ms() const = 0;
  // Log-probabilities of the next target token after `prefix` (no leading
  // EOS); position i of the extended sequence sees visible[i] segments.
  virtual std::vector<double> next_log_probs(std::span<const int> prefix, std::span<const std::size_t> visible) = 0;
};

// StreamBackend over a Model: recomputes the acoustic encoder on the received
// prefix and keeps frames whose receptive field is complete, so kept states
// equal the offline encoder's bit for bit.
class ModelStreamBackend : public StreamBackend {
 public:
  explicit ModelStreamBackend(const Model& model);

  std::vector<SegmentEvent> push(const FeatureSequence& chunk) override;
  std::vector<SegmentEvent> finish() override;
  std::size_t encoder_frames() const override;
  double encoder_frame_ms() const override;
  double lookahead_ms() const override;
  std::vector<double> next_log_probs(std::span<const int> prefix, std::span<const std::size_t> visible) override;

  // Finalized acoustic states [frames x d_model] and greedy labels so far.
  TensorF final_states() const;
  const std::vector<int>& final_path() const { return path_; }
  std::size_t input_frames() const { return input_.frames; }
  std::size_t segment_count() const { return segments_.size(); }

 private:
  std::vector<SegmentEvent> advance(bool at_end);
  void absorb(std::size_t frame, const TensorF& states, const TensorF& probs, double ready_ms,
              std::vector<SegmentEvent>& out);
  const TensorF& memory_for(std::size_t segments);

  const Model& model_;
  FeatureSequence input_;
  bool finished_ = false;
  std::size_t final_frames_ = 0;
  std::vector<float> states_;  // final_frames_ x d_model
  std::vector<float> probs_;   // final_frames_ x classes
  std::vector<int> path_;
  BoundaryTracker tracker_;
  std::vector<Segment> segments_;
  std::size_t memory_rows_ = 0;
  TensorF memory_;
};

struct SimulConfig {
  std::size_t k = 3;  // kWaitAll for full-sentence
  std::size_t n = 2;
  std::size_t beam = 5;
  // Post-stream decoding stops after 2 * S + extra_length tokens.
  std::size_t extra_length = 10;

  void validate() const;
};

enum class SessionPhase { kReading, kWriting, kFinished };

struct SessionAction {
  double ms = 0;
  ActionKind kind = ActionKind::kRead;
  std::size_t segments_read = 0;
  std::vector<int> tokens;  // WRITE only
};

struct SessionResult {
  std::vector<int> hypothesis;
  std::vector<std::size_t> visible_segments;  // per committed token
  LatencyRecord latency;
  std::vector<SessionAction> actions;
  std::size_t segments = 0;
};

class StreamSession {
 public:
  StreamSession(StreamBackend& backend, const SimulConfig& cfg);

  // Throws ValueError after end_stream().
  std::vector<SegmentEvent> push_frames(const FeatureSequence& chunk);
  void end_stream();

  // Next action, or nullopt while it needs more input.
  std::optional<SessionAction> step();
  // Runs step() until blocked or finished.
  void run();
  // Ends the stream if needed and decodes to completion.
  SessionResult finalize();

  SessionPhase phase() const { return phase_; }
  const std::vector<int>& committed() const { return committed_; }
  const std::vector<double>& delays_ms() const { return delays_; }
  const std::vector<SessionAction>& actions() const { return actions_; }
  std::size_t segments_available() const { return available_.size(); }
  std::size_t segments_read() const { return read_; }

  // Beam search over the next stride given the committed prefix; at most
  // max_tokens tokens, shorter when EOS scores best. The second member says
  // whether EOS ended the stride.
  std::pair<std::vector<int>, bool> search_stride(std::size_t max_tokens);

 private:
  std::size_t budget() const;
  std::vector<std::size_t> visibility(std::size_t length) const;
  double total_ms() const;

  StreamBackend& backend_;
  SimulConfig cfg_;
  SessionPhase phase_ = SessionPhase::kReading;
  bool stream_ended_ = false;
  std::vector<SegmentEvent> available_;
  std::size_t read_ = 0;
  double clock_ms_ = 0;
  std::vector<int> committed_;
  std::vector<double> delays_;
  std::vector<std::size_t> visible_;
  std::vector<SessionAction> actions_;
};

// Single-push convenience: feeds all frames, closes the stream, decodes.
SessionResult simulate(const Model& model, const FeatureSequence& features, const SimulConfig& cfg,
                       std::size_t chunk_frames = 0);

// Session transcript in the metrics trace format.
Trace make_trace(const std::string& utterance, const SessionResult& result, const Vocab& target_vocab,
                 const std::string& reference = {});

}  // namespace simulst
