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

#include "simulst/optim.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "simulst/error.h"

namespace simulst {

template <typename Real>
void OptimizerState<Real>::reset(std::span<const Tensor<Real>> params) {
  step = 0;
  first_moment.clear();
  second_moment.clear();
  for (const auto& p : params) {
    first_moment.emplace_back(p.size(), Real(0));
    second_moment.emplace_back(p.size(), Real(0));
  }
}

template <typename Real>
void adam_step(std::span<Tensor<Real>> params, OptimizerState<Real>& state, double lr) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state holds " + std::to_string(state.first_moment.size()) +
                         " moments for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw Error("adam_step: parameter " + std::to_string(i) + " has no gradient");
    }
    if (state.first_moment[i].size() != params[i].size()) {
      throw DimensionError("adam_step: moment shape differs from parameter " + std::to_string(i));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const Real b1 = static_cast<Real>(state.beta1);
  const Real b2 = static_cast<Real>(state.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i].mutable_data();
    auto grad = params[i].mutable_grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const Real g = grad[j];
      m[j] = b1 * m[j] + (Real(1) - b1) * g;
      v[j] = b2 * v[j] + (Real(1) - b2) * g * g;
      const double m_hat = static_cast<double>(m[j]) / c1;
      const double v_hat = static_cast<double>(v[j]) / c2;
      data[j] -= static_cast<Real>(lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
    std::fill(grad.begin(), grad.end(), Real(0));
  }
}

double inverse_sqrt_lr(std::int64_t step, double base, std::int64_t warmup) {
  if (step < 1) throw ValueError("inverse_sqrt_lr: step must be >= 1, got " + std::to_string(step));
  if (warmup < 1) throw ValueError("inverse_sqrt_lr: warmup must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return base * std::min(s / w, std::sqrt(w / s));
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void adam_step<float>(std::span<Tensor<float>>, OptimizerState<float>&, double);
template void adam_step<double>(std::span<Tensor<double>>, OptimizerState<double>&, double);

}  // namespace simulst
