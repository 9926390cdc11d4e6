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

// CTC loss, the blank-limited variant, greedy decoding and boundary
// detection. Throughout, the blank label is the last class index.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "simulst/tensor.h"

namespace simulst {

// Per-frame label distributions over V plus blank (last column).
class CtcPosteriorGrid {
 public:
  CtcPosteriorGrid() = default;
  // Validates that rows are distributions (nonnegative, sum 1 within 1e-6).
  CtcPosteriorGrid(std::size_t frames, std::size_t classes, std::vector<double> probs);
  // Row-wise softmax of logits.
  static CtcPosteriorGrid from_logits(std::size_t frames, std::size_t classes, std::span<const double> logits);

  std::size_t frames() const { return frames_; }
  std::size_t classes() const { return classes_; }
  int blank() const { return static_cast<int>(classes_) - 1; }
  double operator()(std::size_t t, std::size_t c) const { return probs_[t * classes_ + c]; }
  std::span<const double> row(std::size_t t) const { return {probs_.data() + t * classes_, classes_}; }
  std::span<const double> values() const { return probs_; }

 private:
  std::size_t frames_ = 0;
  std::size_t classes_ = 0;
  std::vector<double> probs_;
};

// Half-open frame interval [begin, end).
struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t length() const { return end - begin; }
  bool operator==(const Segment&) const = default;
};

// Ordered, gap-free, nonempty intervals covering [0, frames).
class SegmentSet {
 public:
  SegmentSet() = default;
  // Throws ValueError unless segments partition [0, frames).
  SegmentSet(std::vector<Segment> segments, std::size_t frames);

  std::size_t size() const { return segments_.size(); }
  std::size_t frames() const { return frames_; }
  const Segment& operator[](std::size_t i) const { return segments_[i]; }
  const std::vector<Segment>& segments() const { return segments_; }
  auto begin() const { return segments_.begin(); }
  auto end() const { return segments_.end(); }
  bool operator==(const SegmentSet&) const = default;

 private:
  std::vector<Segment> segments_;
  std::size_t frames_ = 0;
};

enum class BlankPenaltyMode {
  kArgmaxBlankFrames,  // frames whose greedy label is blank
  kAllFrames,
};

BlankPenaltyMode parse_blank_penalty_mode(std::string_view text);
std::string_view to_string(BlankPenaltyMode mode);

// Shortest frame count that can emit labels: one frame per label plus one
// blank between each pair of equal neighbours.
std::size_t min_ctc_frames(std::span<const int> labels);

// -ln sum over all paths collapsing to labels (log-space forward algorithm).
double ctc_nll(const CtcPosteriorGrid& posteriors, std::span<const int> labels);

// Differentiable variant over log-probabilities [T x C]; the gradient with
// respect to log_probs is minus the state occupancy.
template <typename Real>
Tensor<Real> ctc_nll(const Tensor<Real>& log_probs, std::span<const int> labels);

// Removes repeats, then blanks.
std::vector<int> collapse_path(std::span<const int> path, int blank);

double blank_penalty(const CtcPosteriorGrid& posteriors,
                     BlankPenaltyMode mode = BlankPenaltyMode::kArgmaxBlankFrames);

// Sum of blank probabilities on the selected frames. The frame selection is
// computed from the values and not differentiated.
template <typename Real>
Tensor<Real> blank_penalty(const Tensor<Real>& probs,
                           BlankPenaltyMode mode = BlankPenaltyMode::kArgmaxBlankFrames);

double blank_limited_ctc_loss(const CtcPosteriorGrid& posteriors, std::span<const int> labels, double lambda,
                              BlankPenaltyMode mode = BlankPenaltyMode::kArgmaxBlankFrames);

// From logits [T x C]: ctc_nll(log_softmax) + lambda * blank_penalty(softmax).
template <typename Real>
Tensor<Real> blank_limited_ctc_loss(const Tensor<Real>& logits, std::span<const int> labels, double lambda,
                                    BlankPenaltyMode mode = BlankPenaltyMode::kArgmaxBlankFrames);

inline constexpr double kDefaultBlankPenaltyWeight = 0.5;

// Per-frame argmax; ties go to the lowest index, so a token beats blank.
std::vector<int> greedy_path(const CtcPosteriorGrid& posteriors);
template <typename Real>
std::vector<int> greedy_path(std::span<const Real> probs, std::size_t frames, std::size_t classes);

// A boundary separates frames t and t+1 when path[t] is not blank and
// path[t+1] differs from it. Leading blanks join the first segment; a path
// without boundaries yields one segment.
SegmentSet detect_boundaries(std::span<const int> path, int blank);

// Incremental form of detect_boundaries over a label stream.
class BoundaryTracker {
 public:
  explicit BoundaryTracker(int blank) : blank_(blank) {}

  // Feeds the label of the next frame; returns the segment closed by a
  // boundary in front of this frame, if any.
  std::optional<Segment> push(int label);
  // Closes the trailing segment at end of stream (nullopt when no frame was
  // seen or it is already closed).
  std::optional<Segment> finish();

  std::size_t frames_seen() const { return frames_; }

 private:
  int blank_;
  std::size_t frames_ = 0;
  std::size_t open_begin_ = 0;
  std::optional<int> previous_;
  bool finished_ = false;
};

// Fractions (in percent) of utterances whose |#segments - |z|| is within 2,
// 4 and 6.
struct ShrinkQuality {
  double within2 = 0;
  double within4 = 0;
  double within6 = 0;
  std::size_t utterances = 0;
};

ShrinkQuality shrink_quality(std::span<const std::size_t> segment_counts,
                             std::span<const std::size_t> transcript_lengths);

}  // namespace simulst
