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
#include <span>
#include <vector>

#include "simulst/tensor.h"

namespace simulst {

template <typename Real>
struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double base_lr = 2e-3;
  std::int64_t warmup_steps = 10000;
  std::int64_t step = 0;
  // One entry per parameter, same order as the parameter list.
  std::vector<std::vector<Real>> first_moment;
  std::vector<std::vector<Real>> second_moment;

  // Zero moments shaped like params.
  void reset(std::span<const Tensor<Real>> params);
};

// One Adam update with bias correction, then clears the gradients.
// Throws when a parameter has no gradient buffer.
template <typename Real>
void adam_step(std::span<Tensor<Real>> params, OptimizerState<Real>& state, double lr);

// base * min(step / warmup, sqrt(warmup / step)).
double inverse_sqrt_lr(std::int64_t step, double base, std::int64_t warmup);

}  // namespace simulst
