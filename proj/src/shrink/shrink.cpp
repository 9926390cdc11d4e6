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

#include "simulst/shrink.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "simulst/error.h"

namespace simulst {

ShrinkMode parse_shrink_mode(std::string_view text) {
  if (text == "weighted") return ShrinkMode::kWeighted;
  if (text == "average") return ShrinkMode::kAverage;
  if (text == "drop_blank") return ShrinkMode::kDropBlank;
  if (text == "argmax_frame") return ShrinkMode::kArgmaxFrame;
  throw ConfigError("unknown shrink mode '" + std::string(text) + "'");
}

std::string_view to_string(ShrinkMode mode) {
  switch (mode) {
    case ShrinkMode::kWeighted: return "weighted";
    case ShrinkMode::kAverage: return "average";
    case ShrinkMode::kDropBlank: return "drop_blank";
    case ShrinkMode::kArgmaxFrame: return "argmax_frame";
  }
  return "weighted";
}

void ShrinkConfig::validate() const {
  if (!std::isfinite(mu) || mu < 0) throw ConfigError("shrink temperature must be finite and >= 0");
}

template <typename Real>
std::vector<Real> shrink_weights(std::span<const Real> blank_probs, const Segment& segment,
                                 const ShrinkConfig& cfg) {
  if (segment.length() == 0) throw ValueError("shrink: empty segment");
  if (segment.end > blank_probs.size()) throw DimensionError("shrink: segment beyond blank probabilities");
  const std::size_t n = segment.length();
  std::vector<Real> w(n, Real(0));
  switch (cfg.mode) {
    case ShrinkMode::kAverage:
    case ShrinkMode::kDropBlank:
      std::fill(w.begin(), w.end(), Real(1) / static_cast<Real>(n));
      break;
    case ShrinkMode::kArgmaxFrame: {
      std::size_t best = 0;
      for (std::size_t i = 1; i < n; ++i) {
        if (blank_probs[segment.begin + i] < blank_probs[segment.begin + best]) best = i;
      }
      w[best] = Real(1);
      break;
    }
    case ShrinkMode::kWeighted: {
      const Real mu = static_cast<Real>(cfg.mu);
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t i = 0; i < n; ++i) {
        w[i] = mu * (Real(1) - blank_probs[segment.begin + i]);
        mx = std::max(mx, w[i]);
      }
      Real total = 0;
      for (auto& x : w) total += x = std::exp(x - mx);
      for (auto& x : w) x /= total;
      break;
    }
  }
  return w;
}

namespace {

// out[s] = sum_t w_t * states[t] over segment s. When weights_trainable, the
// weights are the mu-softmax of (1 - p) and receive gradient.
template <typename Real>
Tensor<Real> segment_weighted_sum(const Tensor<Real>& states, const Tensor<Real>& blank_probs,
                                  std::vector<Real> weights, const SegmentSet& segments, bool weights_trainable,
                                  Real mu) {
  const std::size_t T = states.dim(0), d = states.dim(1), S = segments.size();
  std::vector<Real> out(S * d, Real(0));
  const Real* h = states.data().data();
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t t = segments[s].begin; t < segments[s].end; ++t) {
      const Real w = weights[t];
      for (std::size_t c = 0; c < d; ++c) out[s * d + c] += w * h[t * d + c];
    }
  }
  auto* nh = states.node();
  auto* np = weights_trainable ? blank_probs.node() : nullptr;
  std::vector<Tensor<Real>> inputs{states};
  if (weights_trainable) inputs.push_back(blank_probs);
  return detail::make_result<Real>(
      {S, d}, std::move(out), inputs,
      [nh, np, T, d, segs = segments.segments(), w = std::move(weights), mu](TensorNode<Real>& o) {
        const Real* g = o.grad.data();
        if (nh->requires_grad) {
          auto dh = nh->grad_buffer();
          for (std::size_t s = 0; s < segs.size(); ++s) {
            for (std::size_t t = segs[s].begin; t < segs[s].end; ++t) {
              for (std::size_t c = 0; c < d; ++c) dh[t * d + c] += w[t] * g[s * d + c];
            }
          }
        }
        if (np != nullptr && np->requires_grad) {
          auto dp = np->grad_buffer();
          std::vector<Real> dw(T, Real(0));
          for (std::size_t s = 0; s < segs.size(); ++s) {
            Real expected = 0;
            for (std::size_t t = segs[s].begin; t < segs[s].end; ++t) {
              Real acc = 0;
              for (std::size_t c = 0; c < d; ++c) acc += g[s * d + c] * nh->data[t * d + c];
              dw[t] = acc;
              expected += w[t] * acc;
            }
            for (std::size_t t = segs[s].begin; t < segs[s].end; ++t) {
              dp[t] -= mu * w[t] * (dw[t] - expected);
            }
          }
        }
      });
}

template <typename Real>
void check_inputs(const Tensor<Real>& states, const SegmentSet& segments) {
  if (states.rank() != 2) throw DimensionError("shrink: states must be [T x d]");
  if (segments.frames() != states.dim(0)) {
    throw DimensionError("shrink: segments cover " + std::to_string(segments.frames()) + " frames, states have " +
                         std::to_string(states.dim(0)));
  }
  if (segments.size() == 0) throw ValueError("shrink: no segments");
}

}  // namespace

template <typename Real>
Tensor<Real> weighted_shrink(const Tensor<Real>& states, const Tensor<Real>& blank_probs,
                             const SegmentSet& segments, const ShrinkConfig& cfg) {
  cfg.validate();
  check_inputs(states, segments);
  if (blank_probs.size() != states.dim(0)) {
    throw DimensionError("shrink: " + std::to_string(blank_probs.size()) + " blank probabilities for " +
                         std::to_string(states.dim(0)) + " frames");
  }
  for (Real p : blank_probs.data()) {
    if (!(p >= Real(0) && p <= Real(1))) throw ValueError("shrink: blank probability outside [0, 1]");
  }
  ShrinkConfig effective = cfg;
  if (effective.mode == ShrinkMode::kDropBlank) effective.mode = ShrinkMode::kAverage;
  std::vector<Real> weights(states.dim(0), Real(0));
  for (const auto& seg : segments) {
    auto w = shrink_weights<Real>(blank_probs.data(), seg, effective);
    std::copy(w.begin(), w.end(), weights.begin() + static_cast<std::ptrdiff_t>(seg.begin));
  }
  const bool trainable = effective.mode == ShrinkMode::kWeighted && effective.mu != 0.0;
  return segment_weighted_sum(states, blank_probs, std::move(weights), segments, trainable,
                              static_cast<Real>(effective.mu));
}

template <typename Real>
Tensor<Real> drop_blank_shrink(const Tensor<Real>& states, std::span<const int> path, int blank,
                               const SegmentSet& segments) {
  check_inputs(states, segments);
  if (path.size() != states.dim(0)) throw DimensionError("drop_blank_shrink: path length differs from states");
  std::vector<Real> weights(states.dim(0), Real(0));
  for (const auto& seg : segments) {
    std::size_t kept = 0;
    for (std::size_t t = seg.begin; t < seg.end; ++t) kept += path[t] != blank;
    for (std::size_t t = seg.begin; t < seg.end; ++t) {
      if (kept == 0) {
        weights[t] = Real(1) / static_cast<Real>(seg.length());
      } else if (path[t] != blank) {
        weights[t] = Real(1) / static_cast<Real>(kept);
      }
    }
  }
  return segment_weighted_sum(states, Tensor<Real>(), std::move(weights), segments, false, Real(0));
}

template <typename Real>
Tensor<Real> shrink(const Tensor<Real>& states, const Tensor<Real>& blank_probs, std::span<const int> path,
                    int blank, const SegmentSet& segments, const ShrinkConfig& cfg) {
  if (cfg.mode == ShrinkMode::kDropBlank) return drop_blank_shrink(states, path, blank, segments);
  return weighted_shrink(states, blank_probs, segments, cfg);
}

#define SIMULST_INSTANTIATE_SHRINK(R)                                                                        \
  template std::vector<R> shrink_weights<R>(std::span<const R>, const Segment&, const ShrinkConfig&);        \
  template Tensor<R> weighted_shrink<R>(const Tensor<R>&, const Tensor<R>&, const SegmentSet&,               \
                                        const ShrinkConfig&);                                                \
  template Tensor<R> drop_blank_shrink<R>(const Tensor<R>&, std::span<const int>, int, const SegmentSet&);   \
  template Tensor<R> shrink<R>(const Tensor<R>&, const Tensor<R>&, std::span<const int>, int, const SegmentSet&, \
                               const ShrinkConfig&);

SIMULST_INSTANTIATE_SHRINK(float)
SIMULST_INSTANTIATE_SHRINK(double)

#undef SIMULST_INSTANTIATE_SHRINK

}  // namespace simulst
