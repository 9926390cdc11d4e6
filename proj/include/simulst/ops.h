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

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "simulst/tensor.h"

namespace simulst {

// Row-major boolean grid; true at (i, j) means query i may attend key j.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t rows, std::size_t cols, bool value = false)
      : rows_(rows), cols_(cols), cells_(rows * cols, value ? 1 : 0) {}

  static AttentionMask causal(std::size_t n);
  static AttentionMask full(std::size_t rows, std::size_t cols) { return {rows, cols, true}; }
  // Row i may see keys [0, visible[i]).
  static AttentionMask prefix(std::span<const std::size_t> visible, std::size_t cols);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool operator()(std::size_t i, std::size_t j) const { return cells_[i * cols_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool value) { cells_[i * cols_ + j] = value ? 1 : 0; }
  std::size_t count_row(std::size_t i) const;

  bool operator==(const AttentionMask&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> cells_;
};

inline constexpr double kMaskedScore = -1e9;
inline constexpr double kLayerNormEps = 1e-5;

template <typename Real> Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
// a[m x n] + bias[n] on every row.
template <typename Real> Tensor<Real> add_bias(const Tensor<Real>& a, const Tensor<Real>& bias);
template <typename Real> Tensor<Real> scale(const Tensor<Real>& a, Real factor);
template <typename Real> Tensor<Real> add_scalar(const Tensor<Real>& a, Real value);
template <typename Real> Tensor<Real> relu(const Tensor<Real>& a);
template <typename Real> Tensor<Real> sum(const Tensor<Real>& a);
template <typename Real> Tensor<Real> mean(const Tensor<Real>& a);

// Softmax along `axis` (negative counts from the back). Max-subtracted.
template <typename Real> Tensor<Real> softmax(const Tensor<Real>& x, int axis = -1);
template <typename Real> Tensor<Real> log_softmax(const Tensor<Real>& x);

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias);

// One-dimensional convolution over time. x is [T x c_in], kernel is
// [width x c_in x c_out], bias is [c_out] or undefined. The input is padded
// with width-1-lookahead zero frames on the left and `lookahead` on the right,
// so output frame t reads input frames t*stride-(width-1-lookahead) ..
// t*stride+lookahead. Output length is ceil(T / stride).
template <typename Real>
Tensor<Real> conv1d_lookahead(const Tensor<Real>& x, const Tensor<Real>& kernel,
                              const Tensor<Real>& bias, int stride, int lookahead);

// Multi-head scaled dot-product attention. q is [Tq x d], k and v [Tk x d];
// d must divide by n_heads. Disallowed scores receive an additive
// kMaskedScore before the softmax.
template <typename Real>
Tensor<Real> masked_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                              const AttentionMask& mask, int n_heads = 1);

// Mean negative log-likelihood over positions whose target is not pad_index.
template <typename Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::span<const int> targets, int pad_index);

// Rows of table selected by ids.
template <typename Real> Tensor<Real> embedding(const Tensor<Real>& table, std::span<const int> ids);
template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, std::size_t begin, std::size_t end);
template <typename Real> Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts);
// Flat elements of x as a rank-1 tensor.
template <typename Real>
Tensor<Real> select(const Tensor<Real>& x, std::span<const std::size_t> flat_indices);
template <typename Real> Tensor<Real> column(const Tensor<Real>& x, std::size_t j);

// Inverted dropout; identity when p == 0.
template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double p, std::mt19937_64& rng);

}  // namespace simulst
