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

#include "simulst/ops.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "simulst/error.h"

namespace simulst {

AttentionMask AttentionMask::causal(std::size_t n) {
  AttentionMask mask(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) mask.set(i, j, true);
  }
  return mask;
}

AttentionMask AttentionMask::prefix(std::span<const std::size_t> visible, std::size_t cols) {
  AttentionMask mask(visible.size(), cols);
  for (std::size_t i = 0; i < visible.size(); ++i) {
    for (std::size_t j = 0; j < std::min(visible[i], cols); ++j) mask.set(i, j, true);
  }
  return mask;
}

std::size_t AttentionMask::count_row(std::size_t i) const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < cols_; ++j) n += cells_[i * cols_ + j];
  return n;
}

namespace {

template <typename Real>
void require_rank2(const Tensor<Real>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_string(t.shape()));
  }
}

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// Accumulates g into the input's gradient when that input takes part in
// differentiation.
template <typename Real>
bool wants_grad(const TensorNode<Real>* node) {
  return node != nullptr && node->requires_grad;
}

}  // namespace

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  std::vector<Real> out(m * n, Real(0));
  const Real* pa = a.data().data();
  const Real* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    Real* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = pa[i * k + p];
      const Real* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  auto* na = a.node();
  auto* nb = b.node();
  return detail::make_result<Real>({m, n}, std::move(out), {a, b}, [na, nb, m, k, n](TensorNode<Real>& o) {
    const Real* g = o.grad.data();
    if (wants_grad(na)) {
      auto ga = na->grad_buffer();
      const Real* pb = nb->data.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const Real* brow = pb + p * n;
          const Real* grow = g + i * n;
          Real acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (wants_grad(nb)) {
      auto gb = nb->grad_buffer();
      const Real* pa = na->data.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const Real av = pa[i * k + p];
          Real* gbrow = gb.data() + p * n;
          const Real* grow = g + i * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto* na = a.node();
  auto* nb = b.node();
  return detail::make_result<Real>(a.shape(), std::move(out), {a, b}, [na, nb](TensorNode<Real>& o) {
    for (auto* n : {na, nb}) {
      if (!wants_grad(n)) continue;
      auto g = n->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "sub");
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto* na = a.node();
  auto* nb = b.node();
  return detail::make_result<Real>(a.shape(), std::move(out), {a, b}, [na, nb](TensorNode<Real>& o) {
    if (wants_grad(na)) {
      auto g = na->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (wants_grad(nb)) {
      auto g = nb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto* na = a.node();
  auto* nb = b.node();
  return detail::make_result<Real>(a.shape(), std::move(out), {a, b}, [na, nb](TensorNode<Real>& o) {
    if (wants_grad(na)) {
      auto g = na->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * nb->data[i];
    }
    if (wants_grad(nb)) {
      auto g = nb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * na->data[i];
    }
  });
}

template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& a, const Tensor<Real>& bias) {
  const std::size_t n = a.cols();
  if (bias.size() != n) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                         shape_string(a.shape()));
  }
  const std::size_t m = a.size() / std::max<std::size_t>(n, 1);
  std::vector<Real> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.data()[j];
  }
  auto* na = a.node();
  auto* nb = bias.node();
  return detail::make_result<Real>(a.shape(), std::move(out), {a, bias},
                                   [na, nb, m, n](TensorNode<Real>& o) {
                                     if (wants_grad(na)) {
                                       auto g = na->grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                                     }
                                     if (wants_grad(nb)) {
                                       auto g = nb->grad_buffer();
                                       for (std::size_t i = 0; i < m; ++i) {
                                         for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[i * n + j];
                                       }
                                     }
                                   });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor) {
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  auto* na = a.node();
  return detail::make_result<Real>(a.shape(), std::move(out), {a}, [na, factor](TensorNode<Real>& o) {
    auto g = na->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
  });
}

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real value) {
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + value;
  auto* na = a.node();
  return detail::make_result<Real>(a.shape(), std::move(out), {a}, [na](TensorNode<Real>& o) {
    auto g = na->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a) {
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.data()[i], Real(0));
  auto* na = a.node();
  return detail::make_result<Real>(a.shape(), std::move(out), {a}, [na](TensorNode<Real>& o) {
    auto g = na->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (na->data[i] > Real(0)) g[i] += o.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  Real total = 0;
  for (Real v : a.data()) total += v;
  auto* na = a.node();
  return detail::make_result<Real>({1}, {total}, {a}, [na](TensorNode<Real>& o) {
    auto g = na->grad_buffer();
    for (auto& x : g) x += o.grad[0];
  });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a) {
  if (a.size() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), Real(1) / static_cast<Real>(a.size()));
}

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, int axis) {
  const int rank = static_cast<int>(x.rank());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw DimensionError("softmax: axis out of range for " + shape_string(x.shape()));
  const std::size_t n = x.dim(static_cast<std::size_t>(axis));
  if (n == 0) throw DimensionError("softmax over an empty axis");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(static_cast<std::size_t>(i));
  for (int i = axis + 1; i < rank; ++i) inner *= x.dim(static_cast<std::size_t>(i));

  std::vector<Real> out(x.size());
  const Real* px = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, px[base + j * inner]);
      Real total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const Real e = std::exp(px[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  auto* nx = x.node();
  return detail::make_result<Real>(x.shape(), std::move(out), {x}, [nx, outer, inner, n](TensorNode<Real>& o) {
    auto g = nx->grad_buffer();
    const Real* y = o.data.data();
    const Real* gy = o.grad.data();
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = a * n * inner + in;
        Real dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += y[base + j * inner] * gy[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += y[idx] * (gy[idx] - dot);
        }
      }
    }
  });
}

template <typename Real>
Tensor<Real> log_softmax(const Tensor<Real>& x) {
  const std::size_t n = x.cols();
  if (n == 0) throw DimensionError("log_softmax over an empty axis");
  const std::size_t m = x.size() / n;
  std::vector<Real> out(x.size());
  const Real* px = x.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = px + i * n;
    const Real mx = *std::max_element(row, row + n);
    Real total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - mx);
    const Real lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
  }
  auto* nx = x.node();
  return detail::make_result<Real>(x.shape(), std::move(out), {x}, [nx, m, n](TensorNode<Real>& o) {
    auto g = nx->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      Real gsum = 0;
      for (std::size_t j = 0; j < n; ++j) gsum += o.grad[i * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        g[i * n + j] += o.grad[i * n + j] - std::exp(o.data[i * n + j]) * gsum;
      }
    }
  });
}

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias) {
  const std::size_t d = x.cols();
  if (d < 2) throw DimensionError("layer_norm needs at least 2 features, got " + std::to_string(d));
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias do not match feature size " + std::to_string(d));
  }
  const std::size_t m = x.size() / d;
  std::vector<Real> out(x.size());
  std::vector<Real> xhat(x.size());
  std::vector<Real> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = x.data().data() + i * d;
    Real mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Real>(d);
    inv_std[i] = Real(1) / std::sqrt(var + static_cast<Real>(kLayerNormEps));
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gain.data()[j] + bias.data()[j];
    }
  }
  auto* nx = x.node();
  auto* ng = gain.node();
  auto* nb = bias.node();
  return detail::make_result<Real>(
      x.shape(), std::move(out), {x, gain, bias},
      [nx, ng, nb, m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode<Real>& o) {
        const Real* gy = o.grad.data();
        if (wants_grad(ng)) {
          auto g = ng->grad_buffer();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < d; ++j) g[j] += gy[i * d + j] * xhat[i * d + j];
          }
        }
        if (wants_grad(nb)) {
          auto g = nb->grad_buffer();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < d; ++j) g[j] += gy[i * d + j];
          }
        }
        if (wants_grad(nx)) {
          auto g = nx->grad_buffer();
          for (std::size_t i = 0; i < m; ++i) {
            Real mean_dxhat = 0, mean_dxhat_xhat = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const Real dxh = gy[i * d + j] * ng->data[j];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xhat[i * d + j];
            }
            mean_dxhat /= static_cast<Real>(d);
            mean_dxhat_xhat /= static_cast<Real>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const Real dxh = gy[i * d + j] * ng->data[j];
              g[i * d + j] += inv_std[i] * (dxh - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
            }
          }
        }
      });
}

template <typename Real>
Tensor<Real> conv1d_lookahead(const Tensor<Real>& x, const Tensor<Real>& kernel,
                              const Tensor<Real>& bias, int stride, int lookahead) {
  require_rank2(x, "conv1d_lookahead");
  if (kernel.rank() != 3) {
    throw DimensionError("conv1d_lookahead: kernel must be [width x c_in x c_out], got " +
                         shape_string(kernel.shape()));
  }
  if (stride != 1 && stride != 2) throw ValueError("conv1d_lookahead: stride must be 1 or 2");
  if (lookahead < 0) throw ValueError("conv1d_lookahead: negative lookahead");
  const std::size_t T = x.dim(0), c_in = x.dim(1);
  const std::size_t width = kernel.dim(0), c_out = kernel.dim(2);
  if (kernel.dim(1) != c_in) {
    throw DimensionError("conv1d_lookahead: kernel " + shape_string(kernel.shape()) +
                         " does not match input " + shape_string(x.shape()));
  }
  if (static_cast<std::size_t>(lookahead) + 1 > width) {
    throw ValueError("conv1d_lookahead: lookahead " + std::to_string(lookahead) +
                     " leaves no room in a kernel of width " + std::to_string(width));
  }
  const std::size_t left = width - 1 - static_cast<std::size_t>(lookahead);
  const std::size_t padded = left + T + static_cast<std::size_t>(lookahead);
  if (width > padded) {
    throw DimensionError("conv1d_lookahead: kernel width " + std::to_string(width) +
                         " exceeds padded input length " + std::to_string(padded));
  }
  if (bias.defined() && bias.size() != c_out) {
    throw DimensionError("conv1d_lookahead: bias does not match output channels");
  }
  const std::size_t s = static_cast<std::size_t>(stride);
  const std::size_t T_out = (T + s - 1) / s;

  std::vector<Real> out(T_out * c_out, Real(0));
  const Real* px = x.data().data();
  const Real* pw = kernel.data().data();
  for (std::size_t t = 0; t < T_out; ++t) {
    Real* orow = out.data() + t * c_out;
    if (bias.defined()) {
      for (std::size_t o = 0; o < c_out; ++o) orow[o] = bias.data()[o];
    }
    for (std::size_t kk = 0; kk < width; ++kk) {
      const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(t * s + kk) - static_cast<std::ptrdiff_t>(left);
      if (r < 0 || r >= static_cast<std::ptrdiff_t>(T)) continue;
      const Real* xrow = px + static_cast<std::size_t>(r) * c_in;
      for (std::size_t i = 0; i < c_in; ++i) {
        const Real xv = xrow[i];
        const Real* wrow = pw + (kk * c_in + i) * c_out;
        for (std::size_t o = 0; o < c_out; ++o) orow[o] += xv * wrow[o];
      }
    }
  }
  auto* nx = x.node();
  auto* nk = kernel.node();
  auto* nb = bias.defined() ? bias.node() : nullptr;
  std::vector<Tensor<Real>> inputs{x, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result<Real>(
      {T_out, c_out}, std::move(out), inputs,
      [nx, nk, nb, T, T_out, c_in, c_out, width, left, s](TensorNode<Real>& o) {
        const Real* gy = o.grad.data();
        if (wants_grad(nb)) {
          auto g = nb->grad_buffer();
          for (std::size_t t = 0; t < T_out; ++t) {
            for (std::size_t c = 0; c < c_out; ++c) g[c] += gy[t * c_out + c];
          }
        }
        const bool gx = wants_grad(nx), gk = wants_grad(nk);
        std::span<Real> dx, dk;
        if (gx) dx = nx->grad_buffer();
        if (gk) dk = nk->grad_buffer();
        for (std::size_t t = 0; t < T_out; ++t) {
          const Real* grow = gy + t * c_out;
          for (std::size_t kk = 0; kk < width; ++kk) {
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(t * s + kk) - static_cast<std::ptrdiff_t>(left);
            if (r < 0 || r >= static_cast<std::ptrdiff_t>(T)) continue;
            const std::size_t ru = static_cast<std::size_t>(r);
            for (std::size_t i = 0; i < c_in; ++i) {
              const std::size_t widx = (kk * c_in + i) * c_out;
              if (gx) {
                Real acc = 0;
                for (std::size_t c = 0; c < c_out; ++c) acc += grow[c] * nk->data[widx + c];
                dx[ru * c_in + i] += acc;
              }
              if (gk) {
                const Real xv = nx->data[ru * c_in + i];
                for (std::size_t c = 0; c < c_out; ++c) dk[widx + c] += xv * grow[c];
              }
            }
          }
        }
      });
}

template <typename Real>
Tensor<Real> masked_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                              const AttentionMask& mask, int n_heads) {
  require_rank2(q, "masked_attention");
  require_rank2(k, "masked_attention");
  require_rank2(v, "masked_attention");
  const std::size_t tq = q.dim(0), tk = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != tk) {
    throw DimensionError("masked_attention: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  if (n_heads < 1 || d % static_cast<std::size_t>(n_heads) != 0) {
    throw DimensionError("masked_attention: model size " + std::to_string(d) +
                         " not divisible by heads " + std::to_string(n_heads));
  }
  if (mask.rows() != tq || mask.cols() != tk) {
    throw DimensionError("masked_attention: mask is " + std::to_string(mask.rows()) + "x" +
                         std::to_string(mask.cols()) + ", scores are " + std::to_string(tq) + "x" +
                         std::to_string(tk));
  }
  for (std::size_t i = 0; i < tq; ++i) {
    if (mask.count_row(i) == 0) {
      throw ValueError("masked_attention: query " + std::to_string(i) + " has no visible key");
    }
  }
  const std::size_t heads = static_cast<std::size_t>(n_heads);
  const std::size_t dh = d / heads;
  const Real inv_scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  const Real masked = static_cast<Real>(kMaskedScore);

  // probs[h][i][j]
  std::vector<Real> probs(heads * tq * tk);
  std::vector<Real> out(tq * d, Real(0));
  const Real* pq = q.data().data();
  const Real* pk = k.data().data();
  const Real* pv = v.data().data();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < tq; ++i) {
      Real* p = probs.data() + (h * tq + i) * tk;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < tk; ++j) {
        Real sc = 0;
        for (std::size_t c = 0; c < dh; ++c) sc += pq[i * d + off + c] * pk[j * d + off + c];
        sc *= inv_scale;
        if (!mask(i, j)) sc += masked;
        p[j] = sc;
        mx = std::max(mx, sc);
      }
      Real total = 0;
      for (std::size_t j = 0; j < tk; ++j) {
        p[j] = std::exp(p[j] - mx);
        total += p[j];
      }
      for (std::size_t j = 0; j < tk; ++j) p[j] /= total;
      Real* orow = out.data() + i * d + off;
      for (std::size_t j = 0; j < tk; ++j) {
        const Real w = p[j];
        for (std::size_t c = 0; c < dh; ++c) orow[c] += w * pv[j * d + off + c];
      }
    }
  }
  auto* nq = q.node();
  auto* nk = k.node();
  auto* nv = v.node();
  return detail::make_result<Real>(
      {tq, d}, std::move(out), {q, k, v},
      [nq, nk, nv, tq, tk, d, heads, dh, inv_scale, probs = std::move(probs)](TensorNode<Real>& o) {
        const Real* gy = o.grad.data();
        std::span<Real> dq, dk, dv;
        if (wants_grad(nq)) dq = nq->grad_buffer();
        if (wants_grad(nk)) dk = nk->grad_buffer();
        if (wants_grad(nv)) dv = nv->grad_buffer();
        std::vector<Real> dp(tk);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * dh;
          for (std::size_t i = 0; i < tq; ++i) {
            const Real* p = probs.data() + (h * tq + i) * tk;
            const Real* grow = gy + i * d + off;
            Real dot = 0;
            for (std::size_t j = 0; j < tk; ++j) {
              Real acc = 0;
              for (std::size_t c = 0; c < dh; ++c) acc += grow[c] * nv->data[j * d + off + c];
              dp[j] = acc;
              dot += p[j] * acc;
              if (!dv.empty()) {
                for (std::size_t c = 0; c < dh; ++c) dv[j * d + off + c] += p[j] * grow[c];
              }
            }
            for (std::size_t j = 0; j < tk; ++j) {
              const Real ds = p[j] * (dp[j] - dot) * inv_scale;
              if (ds == Real(0)) continue;
              if (!dq.empty()) {
                for (std::size_t c = 0; c < dh; ++c) dq[i * d + off + c] += ds * nk->data[j * d + off + c];
              }
              if (!dk.empty()) {
                for (std::size_t c = 0; c < dh; ++c) dk[j * d + off + c] += ds * nq->data[i * d + off + c];
              }
            }
          }
        }
      });
}

template <typename Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::span<const int> targets, int pad_index) {
  require_rank2(logits, "cross_entropy");
  const std::size_t n = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
  }
  std::size_t count = 0;
  for (int t : targets) {
    if (t == pad_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw ValueError("cross_entropy: target " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    ++count;
  }
  if (count == 0) throw ValueError("cross_entropy: every position is padding");

  std::vector<Real> probs(logits.size());
  Real total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = logits.data().data() + i * vocab;
    const Real mx = *std::max_element(row, row + vocab);
    Real z = 0;
    for (std::size_t j = 0; j < vocab; ++j) {
      probs[i * vocab + j] = std::exp(row[j] - mx);
      z += probs[i * vocab + j];
    }
    for (std::size_t j = 0; j < vocab; ++j) probs[i * vocab + j] /= z;
    if (targets[i] != pad_index) total -= row[targets[i]] - mx - std::log(z);
  }
  const Real inv_count = Real(1) / static_cast<Real>(count);
  std::vector<int> tgt(targets.begin(), targets.end());
  auto* nl = logits.node();
  return detail::make_result<Real>(
      {1}, {total * inv_count}, {logits},
      [nl, n, vocab, pad_index, inv_count, tgt = std::move(tgt), probs = std::move(probs)](TensorNode<Real>& o) {
        auto g = nl->grad_buffer();
        const Real scale_factor = o.grad[0] * inv_count;
        for (std::size_t i = 0; i < n; ++i) {
          if (tgt[i] == pad_index) continue;
          for (std::size_t j = 0; j < vocab; ++j) g[i * vocab + j] += scale_factor * probs[i * vocab + j];
          g[i * vocab + static_cast<std::size_t>(tgt[i])] -= scale_factor;
        }
      });
}

template <typename Real>
Tensor<Real> embedding(const Tensor<Real>& table, std::span<const int> ids) {
  require_rank2(table, "embedding");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<Real> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw ValueError("embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(rows));
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  auto* nt = table.node();
  return detail::make_result<Real>({ids.size(), d}, std::move(out), {table},
                                   [nt, d, idx = std::move(idx)](TensorNode<Real>& o) {
                                     auto g = nt->grad_buffer();
                                     for (std::size_t i = 0; i < idx.size(); ++i) {
                                       Real* dst = g.data() + static_cast<std::size_t>(idx[i]) * d;
                                       for (std::size_t c = 0; c < d; ++c) dst[c] += o.grad[i * d + c];
                                     }
                                   });
}

template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_rows");
  if (begin > end || end > x.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + shape_string(x.shape()));
  }
  const std::size_t d = x.dim(1);
  std::vector<Real> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * d),
                        x.data().begin() + static_cast<std::ptrdiff_t>(end * d));
  auto* nx = x.node();
  return detail::make_result<Real>({end - begin, d}, std::move(out), {x}, [nx, begin, d](TensorNode<Real>& o) {
    auto g = nx->grad_buffer();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[begin * d + i] += o.grad[i];
  });
}

template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != d) throw DimensionError("concat_rows: column mismatch");
    rows += p.dim(0);
  }
  std::vector<Real> out;
  out.reserve(rows * d);
  std::vector<TensorNode<Real>*> nodes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node());
  }
  return detail::make_result<Real>({rows, d}, std::move(out), parts, [nodes](TensorNode<Real>& o) {
    std::size_t offset = 0;
    for (auto* n : nodes) {
      if (wants_grad(n)) {
        auto g = n->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[offset + i];
      }
      offset += n->data.size();
    }
  });
}

template <typename Real>
Tensor<Real> select(const Tensor<Real>& x, std::span<const std::size_t> flat_indices) {
  std::vector<Real> out(flat_indices.size());
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    if (flat_indices[i] >= x.size()) throw DimensionError("select: index outside tensor");
    out[i] = x.data()[flat_indices[i]];
  }
  std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
  auto* nx = x.node();
  return detail::make_result<Real>({idx.size()}, std::move(out), {x}, [nx, idx](TensorNode<Real>& o) {
    auto g = nx->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += o.grad[i];
  });
}

template <typename Real>
Tensor<Real> column(const Tensor<Real>& x, std::size_t j) {
  require_rank2(x, "column");
  if (j >= x.dim(1)) throw DimensionError("column: index outside " + shape_string(x.shape()));
  std::vector<std::size_t> idx(x.dim(0));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i * x.dim(1) + j;
  return select(x, std::span<const std::size_t>(idx));
}

template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ValueError("dropout rate must be below 1");
  std::bernoulli_distribution keep(1.0 - p);
  const Real factor = static_cast<Real>(1.0 / (1.0 - p));
  std::vector<Real> scale_mask(x.size());
  for (auto& m : scale_mask) m = keep(rng) ? factor : Real(0);
  return mul(x, Tensor<Real>::from(x.shape(), std::move(scale_mask)));
}

#define SIMULST_INSTANTIATE_OPS(R)                                                                  \
  template Tensor<R> matmul<R>(const Tensor<R>&, const Tensor<R>&);                                 \
  template Tensor<R> add<R>(const Tensor<R>&, const Tensor<R>&);                                    \
  template Tensor<R> sub<R>(const Tensor<R>&, const Tensor<R>&);                                    \
  template Tensor<R> mul<R>(const Tensor<R>&, const Tensor<R>&);                                    \
  template Tensor<R> add_bias<R>(const Tensor<R>&, const Tensor<R>&);                               \
  template Tensor<R> scale<R>(const Tensor<R>&, R);                                                 \
  template Tensor<R> add_scalar<R>(const Tensor<R>&, R);                                            \
  template Tensor<R> relu<R>(const Tensor<R>&);                                                     \
  template Tensor<R> sum<R>(const Tensor<R>&);                                                      \
  template Tensor<R> mean<R>(const Tensor<R>&);                                                     \
  template Tensor<R> softmax<R>(const Tensor<R>&, int);                                             \
  template Tensor<R> log_softmax<R>(const Tensor<R>&);                                              \
  template Tensor<R> layer_norm<R>(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&);           \
  template Tensor<R> conv1d_lookahead<R>(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&, int, \
                                         int);                                                      \
  template Tensor<R> masked_attention<R>(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&,      \
                                         const AttentionMask&, int);                                \
  template Tensor<R> cross_entropy<R>(const Tensor<R>&, std::span<const int>, int);                 \
  template Tensor<R> embedding<R>(const Tensor<R>&, std::span<const int>);                          \
  template Tensor<R> slice_rows<R>(const Tensor<R>&, std::size_t, std::size_t);                     \
  template Tensor<R> concat_rows<R>(const std::vector<Tensor<R>>&);                                 \
  template Tensor<R> select<R>(const Tensor<R>&, std::span<const std::size_t>);                     \
  template Tensor<R> column<R>(const Tensor<R>&, std::size_t);                                      \
  template Tensor<R> dropout<R>(const Tensor<R>&, double, std::mt19937_64&);

SIMULST_INSTANTIATE_OPS(float)
SIMULST_INSTANTIATE_OPS(double)

#undef SIMULST_INSTANTIATE_OPS

}  // namespace simulst
