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

#include "simulst/ctc.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>

#include "simulst/error.h"
#include "simulst/ops.h"

namespace simulst {

namespace {

constexpr double kLogZero = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

void check_labels(std::span<const int> labels, std::size_t classes) {
  if (labels.empty()) throw ValueError("ctc: label sequence is empty");
  const int blank = static_cast<int>(classes) - 1;
  for (int l : labels) {
    if (l < 0 || l >= blank) {
      throw ValueError("ctc: label " + std::to_string(l) + " is blank or outside the " +
                       std::to_string(blank) + "-token vocabulary");
    }
  }
}

struct CtcResult {
  double nll = 0;
  std::vector<double> grad;  // d nll / d log_prob, [T x C]; empty unless requested
};

// Forward-backward over the blank-extended label sequence. log_prob(t, c)
// must return log p_t(c).
template <typename LogProb>
CtcResult ctc_forward_backward(std::size_t T, std::size_t C, std::span<const int> labels, LogProb log_prob,
                               bool want_grad) {
  check_labels(labels, C);
  const std::size_t needed = min_ctc_frames(labels);
  if (T < needed) {
    throw InfeasibleAlignmentError("ctc: " + std::to_string(labels.size()) + " labels need at least " +
                                   std::to_string(needed) + " frames, got " + std::to_string(T));
  }
  const int blank = static_cast<int>(C) - 1;
  const std::size_t S = 2 * labels.size() + 1;
  std::vector<int> ext(S, blank);
  for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(T * S, kLogZero);
  alpha[0] = log_prob(0, blank);
  alpha[1] = log_prob(0, ext[1]);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha[(t - 1) * S + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * S + s - 1]);
      if (can_skip(s)) a = log_add(a, alpha[(t - 1) * S + s - 2]);
      if (a != kLogZero) alpha[t * S + s] = a + log_prob(t, ext[s]);
    }
  }
  const double ll = log_add(alpha[(T - 1) * S + S - 1], alpha[(T - 1) * S + S - 2]);
  if (ll == kLogZero) {
    throw InfeasibleAlignmentError("ctc: every alignment has zero probability");
  }
  CtcResult result;
  result.nll = -ll;
  if (!want_grad) return result;

  std::vector<double> beta(T * S, kLogZero);
  beta[(T - 1) * S + S - 1] = log_prob(T - 1, ext[S - 1]);
  beta[(T - 1) * S + S - 2] = log_prob(T - 1, ext[S - 2]);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta[(t + 1) * S + s];
      if (s + 1 < S) b = log_add(b, beta[(t + 1) * S + s + 1]);
      if (s + 2 < S && can_skip(s + 2)) b = log_add(b, beta[(t + 1) * S + s + 2]);
      if (b != kLogZero) beta[t * S + s] = b + log_prob(t, ext[s]);
    }
  }
  result.grad.assign(T * C, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      const double a = alpha[t * S + s], b = beta[t * S + s];
      if (a == kLogZero || b == kLogZero) continue;
      const double occupancy = std::exp(a + b - log_prob(t, ext[s]) - ll);
      result.grad[t * C + static_cast<std::size_t>(ext[s])] -= occupancy;
    }
  }
  return result;
}

}  // namespace

CtcPosteriorGrid::CtcPosteriorGrid(std::size_t frames, std::size_t classes, std::vector<double> probs)
    : frames_(frames), classes_(classes), probs_(std::move(probs)) {
  if (classes_ < 2) throw DimensionError("posterior grid needs at least one token plus blank");
  if (probs_.size() != frames_ * classes_) {
    throw DimensionError("posterior grid: " + std::to_string(probs_.size()) + " values for " +
                         std::to_string(frames_) + "x" + std::to_string(classes_));
  }
  for (std::size_t t = 0; t < frames_; ++t) {
    double total = 0;
    for (std::size_t c = 0; c < classes_; ++c) {
      const double p = probs_[t * classes_ + c];
      if (!(p >= 0.0)) throw ValueError("posterior grid: negative or NaN entry in frame " + std::to_string(t));
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ValueError("posterior grid: frame " + std::to_string(t) + " sums to " + std::to_string(total));
    }
  }
}

CtcPosteriorGrid CtcPosteriorGrid::from_logits(std::size_t frames, std::size_t classes,
                                               std::span<const double> logits) {
  if (logits.size() != frames * classes) throw DimensionError("posterior grid: logits size mismatch");
  std::vector<double> probs(logits.size());
  for (std::size_t t = 0; t < frames; ++t) {
    const double* row = logits.data() + t * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += probs[t * classes + c] = std::exp(row[c] - mx);
    for (std::size_t c = 0; c < classes; ++c) probs[t * classes + c] /= z;
  }
  return CtcPosteriorGrid(frames, classes, std::move(probs));
}

SegmentSet::SegmentSet(std::vector<Segment> segments, std::size_t frames)
    : segments_(std::move(segments)), frames_(frames) {
  std::size_t cursor = 0;
  for (const auto& seg : segments_) {
    if (seg.begin != cursor || seg.end <= seg.begin) {
      throw ValueError("segments must be nonempty and contiguous from frame 0");
    }
    cursor = seg.end;
  }
  if (cursor != frames_) {
    throw ValueError("segments cover " + std::to_string(cursor) + " of " + std::to_string(frames_) + " frames");
  }
}

BlankPenaltyMode parse_blank_penalty_mode(std::string_view text) {
  if (text == "argmax_blank_frames") return BlankPenaltyMode::kArgmaxBlankFrames;
  if (text == "all_frames") return BlankPenaltyMode::kAllFrames;
  throw ConfigError("unknown blank penalty mode '" + std::string(text) + "'");
}

std::string_view to_string(BlankPenaltyMode mode) {
  return mode == BlankPenaltyMode::kAllFrames ? "all_frames" : "argmax_blank_frames";
}

std::size_t min_ctc_frames(std::span<const int> labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) ++n;
  }
  return n;
}

double ctc_nll(const CtcPosteriorGrid& posteriors, std::span<const int> labels) {
  if (posteriors.frames() == 0) throw InfeasibleAlignmentError("ctc: no frames");
  auto lp = [&](std::size_t t, int c) { return std::log(posteriors(t, static_cast<std::size_t>(c))); };
  return ctc_forward_backward(posteriors.frames(), posteriors.classes(), labels, lp, false).nll;
}

template <typename Real>
Tensor<Real> ctc_nll(const Tensor<Real>& log_probs, std::span<const int> labels) {
  if (log_probs.rank() != 2) throw DimensionError("ctc_nll: log-probabilities must be [T x C]");
  const std::size_t T = log_probs.dim(0), C = log_probs.dim(1);
  if (T == 0) throw InfeasibleAlignmentError("ctc: no frames");
  const Real* data = log_probs.data().data();
  auto lp = [&](std::size_t t, int c) { return static_cast<double>(data[t * C + static_cast<std::size_t>(c)]); };
  const bool want_grad = detail::should_record<Real>({log_probs});
  CtcResult r = ctc_forward_backward(T, C, labels, lp, want_grad);
  auto* node = log_probs.node();
  return detail::make_result<Real>({1}, {static_cast<Real>(r.nll)}, {log_probs},
                                   [node, grad = std::move(r.grad)](TensorNode<Real>& o) {
                                     auto g = node->grad_buffer();
                                     const double upstream = static_cast<double>(o.grad[0]);
                                     for (std::size_t i = 0; i < g.size(); ++i) {
                                       g[i] += static_cast<Real>(upstream * grad[i]);
                                     }
                                   });
}

std::vector<int> collapse_path(std::span<const int> path, int blank) {
  std::vector<int> out;
  for (std::size_t t = 0; t < path.size(); ++t) {
    if (path[t] == blank) continue;
    if (t > 0 && path[t] == path[t - 1]) continue;
    out.push_back(path[t]);
  }
  return out;
}

namespace {

std::vector<std::size_t> penalty_frames(std::span<const int> path, int blank, BlankPenaltyMode mode) {
  std::vector<std::size_t> frames;
  for (std::size_t t = 0; t < path.size(); ++t) {
    if (mode == BlankPenaltyMode::kAllFrames || path[t] == blank) frames.push_back(t);
  }
  return frames;
}

}  // namespace

double blank_penalty(const CtcPosteriorGrid& posteriors, BlankPenaltyMode mode) {
  const auto path = greedy_path(posteriors);
  double total = 0;
  for (std::size_t t : penalty_frames(path, posteriors.blank(), mode)) {
    total += posteriors(t, static_cast<std::size_t>(posteriors.blank()));
  }
  return total;
}

template <typename Real>
Tensor<Real> blank_penalty(const Tensor<Real>& probs, BlankPenaltyMode mode) {
  if (probs.rank() != 2) throw DimensionError("blank_penalty: probabilities must be [T x C]");
  const std::size_t T = probs.dim(0), C = probs.dim(1);
  const int blank = static_cast<int>(C) - 1;
  const auto path = greedy_path<Real>(probs.data(), T, C);
  std::vector<std::size_t> flat;
  for (std::size_t t : penalty_frames(path, blank, mode)) flat.push_back(t * C + static_cast<std::size_t>(blank));
  return sum(select(probs, std::span<const std::size_t>(flat)));
}

double blank_limited_ctc_loss(const CtcPosteriorGrid& posteriors, std::span<const int> labels, double lambda,
                              BlankPenaltyMode mode) {
  if (lambda < 0) throw ValueError("blank penalty weight must be >= 0");
  const double nll = ctc_nll(posteriors, labels);
  if (lambda == 0) return nll;
  return nll + lambda * blank_penalty(posteriors, mode);
}

template <typename Real>
Tensor<Real> blank_limited_ctc_loss(const Tensor<Real>& logits, std::span<const int> labels, double lambda,
                                    BlankPenaltyMode mode) {
  if (lambda < 0) throw ValueError("blank penalty weight must be >= 0");
  Tensor<Real> nll = ctc_nll(log_softmax(logits), labels);
  if (lambda == 0) return nll;
  Tensor<Real> penalty = blank_penalty(softmax(logits), mode);
  return add(nll, scale(penalty, static_cast<Real>(lambda)));
}

std::vector<int> greedy_path(const CtcPosteriorGrid& posteriors) {
  return greedy_path<double>(posteriors.values(), posteriors.frames(), posteriors.classes());
}

template <typename Real>
std::vector<int> greedy_path(std::span<const Real> probs, std::size_t frames, std::size_t classes) {
  if (probs.size() != frames * classes) throw DimensionError("greedy_path: size mismatch");
  std::vector<int> path(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const Real* row = probs.data() + t * classes;
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > row[best]) best = c;
    }
    path[t] = static_cast<int>(best);
  }
  return path;
}

SegmentSet detect_boundaries(std::span<const int> path, int blank) {
  if (path.empty()) throw ValueError("detect_boundaries: empty path");
  BoundaryTracker tracker(blank);
  std::vector<Segment> segments;
  for (int label : path) {
    if (auto seg = tracker.push(label)) segments.push_back(*seg);
  }
  if (auto seg = tracker.finish()) segments.push_back(*seg);
  return SegmentSet(std::move(segments), path.size());
}

std::optional<Segment> BoundaryTracker::push(int label) {
  if (finished_) throw Error("BoundaryTracker: push after finish");
  std::optional<Segment> closed;
  if (previous_ && *previous_ != blank_ && label != *previous_) {
    closed = Segment{open_begin_, frames_};
    open_begin_ = frames_;
  }
  previous_ = label;
  ++frames_;
  return closed;
}

std::optional<Segment> BoundaryTracker::finish() {
  if (finished_) return std::nullopt;
  finished_ = true;
  if (frames_ == open_begin_) return std::nullopt;
  return Segment{open_begin_, frames_};
}

ShrinkQuality shrink_quality(std::span<const std::size_t> segment_counts,
                             std::span<const std::size_t> transcript_lengths) {
  if (segment_counts.size() != transcript_lengths.size()) {
    throw DimensionError("shrink_quality: " + std::to_string(segment_counts.size()) + " segment counts for " +
                         std::to_string(transcript_lengths.size()) + " transcripts");
  }
  if (segment_counts.empty()) throw ValueError("shrink_quality: empty corpus");
  std::size_t le2 = 0, le4 = 0, le6 = 0;
  for (std::size_t i = 0; i < segment_counts.size(); ++i) {
    const auto a = static_cast<long long>(segment_counts[i]);
    const auto b = static_cast<long long>(transcript_lengths[i]);
    const long long diff = std::llabs(a - b);
    le2 += diff <= 2;
    le4 += diff <= 4;
    le6 += diff <= 6;
  }
  const double n = static_cast<double>(segment_counts.size());
  return ShrinkQuality{100.0 * static_cast<double>(le2) / n, 100.0 * static_cast<double>(le4) / n,
                       100.0 * static_cast<double>(le6) / n, segment_counts.size()};
}

template Tensor<float> ctc_nll<float>(const Tensor<float>&, std::span<const int>);
template Tensor<double> ctc_nll<double>(const Tensor<double>&, std::span<const int>);
template Tensor<float> blank_penalty<float>(const Tensor<float>&, BlankPenaltyMode);
template Tensor<double> blank_penalty<double>(const Tensor<double>&, BlankPenaltyMode);
template Tensor<float> blank_limited_ctc_loss<float>(const Tensor<float>&, std::span<const int>, double,
                                                     BlankPenaltyMode);
template Tensor<double> blank_limited_ctc_loss<double>(const Tensor<double>&, std::span<const int>, double,
                                                       BlankPenaltyMode);
template std::vector<int> greedy_path<float>(std::span<const float>, std::size_t, std::size_t);
template std::vector<int> greedy_path<double>(std::span<const double>, std::size_t, std::size_t);

}  // namespace simulst
