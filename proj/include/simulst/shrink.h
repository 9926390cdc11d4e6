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

// Collapses per-frame acoustic states into one state per CTC segment.

#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "simulst/ctc.h"
#include "simulst/tensor.h"

namespace simulst {

enum class ShrinkMode {
  kWeighted,     // softmax of mu * (1 - p_blank) within each segment
  kAverage,      // plain mean (weighted with mu = 0)
  kDropBlank,    // mean over non-blank frames, plain mean if none
  kArgmaxFrame,  // the frame with the lowest blank probability (mu -> inf)
};

ShrinkMode parse_shrink_mode(std::string_view text);
std::string_view to_string(ShrinkMode mode);

struct ShrinkConfig {
  double mu = 1.0;
  ShrinkMode mode = ShrinkMode::kWeighted;

  void validate() const;
};

// Per-frame weights for one segment; they sum to 1 over the segment.
// blank_probs is indexed by absolute frame.
template <typename Real>
std::vector<Real> shrink_weights(std::span<const Real> blank_probs, const Segment& segment,
                                 const ShrinkConfig& cfg);

// states is [T x d], blank_probs is [T] (the blank column of the CTC
// softmax). Returns [segments.size() x d]. With mode kWeighted the result is
// differentiable with respect to both inputs; the other modes pass gradient
// to states only.
template <typename Real>
Tensor<Real> weighted_shrink(const Tensor<Real>& states, const Tensor<Real>& blank_probs,
                             const SegmentSet& segments, const ShrinkConfig& cfg);

// Averages the non-blank frames of each segment according to the greedy
// path; segments without any non-blank frame fall back to the plain mean.
template <typename Real>
Tensor<Real> drop_blank_shrink(const Tensor<Real>& states, std::span<const int> path, int blank,
                               const SegmentSet& segments);

// Dispatches on cfg.mode.
template <typename Real>
Tensor<Real> shrink(const Tensor<Real>& states, const Tensor<Real>& blank_probs, std::span<const int> path,
                    int blank, const SegmentSet& segments, const ShrinkConfig& cfg);

}  // namespace simulst
